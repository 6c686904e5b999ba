use tomogcv_web::Demo;

#[test]
fn reconstruct_needs_a_scan() {
    let mut d = Demo::new(16, 40).unwrap();
    assert!(d.reconstruct("bpf", 0.0).is_err());
    assert!(d.gcv_curve(5).is_err());
    assert!(d.bandwidth().is_empty());
}

#[test]
fn gcv_and_fixed_reconstructions() {
    let mut d = Demo::new(24, 60).unwrap();
    assert_eq!(d.phantom().len(), 24 * 24);
    let y = d.simulate(1e5, 3).unwrap();
    assert_eq!(y.len(), 24 * 60);
    let total: f64 = y.iter().sum();
    assert!((total - 1e5).abs() < 5.0 * 1e5f64.sqrt());

    let img = d.reconstruct("bpf", 0.0).unwrap();
    assert_eq!(img.len(), 24 * 24);
    let bw = d.bandwidth();
    assert_eq!(bw.len(), 3);
    assert!(bw[0] > 0.0 && bw[0] == bw[1] && bw[2] == 0.0);
    assert!(d.rmse().is_finite());

    d.reconstruct("bpfe+", 0.0).unwrap();
    assert!(d.rmse().is_finite());

    d.reconstruct("bpf", 2.5).unwrap();
    assert_eq!(d.bandwidth()[0], 2.5);
    assert!(d.reconstruct("art", 0.0).is_err());
}

#[test]
fn gcv_curve_has_one_triple_per_point() {
    let mut d = Demo::new(16, 40).unwrap();
    d.simulate(1e4, 1).unwrap();
    let c = d.gcv_curve(7).unwrap();
    assert_eq!(c.len(), 21);
    assert!(c.chunks(3).all(|t| t[0] > 0.0 && t[1].is_finite() && t[2] >= 0.0));
    assert!(c[0] < c[18]);
}

#[test]
fn same_seed_same_scan() {
    let mut a = Demo::new(16, 40).unwrap();
    let mut b = Demo::new(16, 40).unwrap();
    assert_eq!(a.simulate(1e4, 9).unwrap(), b.simulate(1e4, 9).unwrap());
}
