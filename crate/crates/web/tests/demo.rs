use rramtopo_web::{form_prune, vmm_error, write_trace};

#[test]
fn histograms_gain_a_zero_mode_after_pruning() {
    let v = form_prune(40, 40, 0.5, 61, 3).unwrap();
    assert_eq!(v["peaks_before"].as_array().unwrap().len(), 2);
    assert_eq!(v["peaks_after"].as_array().unwrap().len(), 3);
    let total = |k: &str| v[k].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>();
    assert_eq!(total("before"), 1600);
    assert_eq!(total("after"), 1600);
}

#[test]
fn vmm_error_falls_with_bits() {
    let v = vmm_error(24, 8, 0.0, 5, 1).unwrap();
    let e: Vec<f64> = v["relative_error"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(e.len(), 8);
    assert!(e.windows(2).all(|w| w[1] <= w[0]), "{e:?}");
    assert!(e[7] < 0.02);
}

#[test]
fn write_trace_ends_inside_tolerance() {
    let v = write_trace(5.0, 27.0, 0.1, 9).unwrap();
    let g: Vec<f64> = v["conductance_us"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(g[0], 5.0);
    assert!(v["converged"].as_bool().unwrap());
    let last = *g.last().unwrap();
    assert!((last - 27.0).abs() / 27.0 <= 0.1, "{g:?}");
    // Earlier points are still outside the band.
    assert!(g[..g.len() - 1].iter().all(|x| (x - 27.0).abs() / 27.0 > 0.1));
    assert_eq!(write_trace(27.0, 27.0, 0.1, 9).unwrap()["conductance_us"].as_array().unwrap().len(), 1);
}
