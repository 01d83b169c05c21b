//! Finite-difference checks of every op and of the full network.

use sdts::gradcheck::{network_suite, op_suite, Report};

fn assert_all(reports: &[(String, Report)]) {
    for (name, r) in reports {
        assert!(r.passed(), "{name}: {r:?}");
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let reports = op_suite().unwrap();
    assert_eq!(reports.len(), 13);
    assert_all(&reports);
    let (_, relu) = reports.iter().find(|(n, _)| n == "relu").unwrap();
    assert_eq!(relu.skipped, 0);
}

#[test]
fn network_matches_finite_differences() {
    let reports = network_suite().unwrap();
    assert!(reports.iter().all(|(_, r)| r.checked > 500), "{reports:?}");
    assert_all(&reports);
}
