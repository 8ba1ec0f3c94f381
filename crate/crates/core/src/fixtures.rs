//! Small hand-checkable fixtures shared by unit, integration and acceptance
//! tests.

use crate::genotype::Individual;
use crate::instance::{Customer, CustomerKind, Instance};

/// Eight-node example: customers 1..6 on a 3x2 grid, mandatory {1, 5, 6},
/// dynamic {2, 3, 4}, start depot 7 below customer 4 and end depot 8 below
/// customer 6. At [`GRID_EXAMPLE_T`] customers 3 and 4 have requested and the
/// plan of [`grid_example_individual`] has realized (1, 5) and (6).
pub fn grid_example() -> Instance {
    let customers = vec![
        Customer::new(0.0, 4.0, CustomerKind::Mandatory, 0.0),
        Customer::new(3.0, 4.0, CustomerKind::Dynamic, 50.0),
        Customer::new(6.0, 4.0, CustomerKind::Dynamic, 5.0),
        Customer::new(0.0, 2.0, CustomerKind::Dynamic, 3.0),
        Customer::new(3.0, 2.0, CustomerKind::Mandatory, 0.0),
        Customer::new(6.0, 2.0, CustomerKind::Mandatory, 0.0),
        Customer::new(0.0, 0.0, CustomerKind::StartDepot, 0.0),
        Customer::new(6.0, 0.0, CustomerKind::EndDepot, 0.0),
    ];
    Instance::new("grid-example", customers).expect("valid fixture")
}

pub const GRID_EXAMPLE_T: f64 = 8.0;

/// v = (1,2,1,1,1,2), a = (1,0,1,0,1,1), p = (4,1,6,5,3,2) in 1-based notation.
pub fn grid_example_individual() -> Individual {
    Individual::new(
        vec![0, 1, 0, 0, 0, 1],
        vec![true, false, true, false, true, true],
        vec![3, 0, 5, 4, 2, 1],
    )
}
