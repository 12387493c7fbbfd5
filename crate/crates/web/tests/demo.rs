use netassim_web::{enkf_sis, sis_trajectory, snn_lfp};

#[test]
fn exports_return_expected_lengths() {
    let y = sis_trajectory(200, 0.0015, 0.1, 50, 1).unwrap();
    assert_eq!(y.len(), 50);
    assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(snn_lfp(50, 4.86e-6, 20.0, 1).unwrap().len(), 20);
    let trace = enkf_sis(100, 0.0015, 30, 8, 2).unwrap();
    assert_eq!(trace.len(), 60);
    assert!(trace.chunks(2).all(|c| (0.0015 / 4.0..=0.006).contains(&c[0])));
}

#[test]
fn same_seed_same_trajectory() {
    assert_eq!(
        sis_trajectory(300, 0.002, 0.2, 40, 9).unwrap(),
        sis_trajectory(300, 0.002, 0.2, 40, 9).unwrap()
    );
}
