use ipcascade::address::{build_mass_tree, AddressUniverse};
use ipcascade::cascade::{generate, CascadeSpec, Generator};
use ipcascade::fit::{compute_weights, default_fit_range, fit_sigma, preprocess};

fn fitted(sigma: f64, n: u64, seed: u64) -> f64 {
    let u = AddressUniverse::v4();
    let (set, _) = generate(&CascadeSpec::new(
        Generator::logit_normal(sigma).unwrap(),
        n,
        u,
        seed,
    ))
    .unwrap();
    let levels = default_fit_range(u);
    let tree = build_mass_tree(&set, levels.start() - 1, *levels.end()).unwrap();
    let w = compute_weights(&tree, levels.clone()).unwrap();
    fit_sigma(&preprocess(&w, levels).unwrap()).unwrap().sigma
}

#[test]
fn error_shrinks_with_more_addresses() {
    for sigma in [1.0, 1.61] {
        let small: f64 = (0..3).map(|s| fitted(sigma, 50_000, s)).sum::<f64>() / 3.0;
        let large: f64 = (0..3).map(|s| fitted(sigma, 500_000, s)).sum::<f64>() / 3.0;
        assert!(
            (large - sigma).abs() < (small - sigma).abs(),
            "sigma {sigma}: {small} then {large}"
        );
    }
}

#[test]
fn fit_orders_generators() {
    let fits: Vec<f64> = [0.5, 1.0, 1.61, 3.16]
        .iter()
        .map(|&s| fitted(s, 100_000, 9))
        .collect();
    assert!(fits.windows(2).all(|w| w[0] < w[1]), "{fits:?}");
}

#[test]
fn moderate_sigma_recovered_at_large_n() {
    let f = fitted(1.0, 500_000, 4);
    assert!((f - 1.0).abs() <= 0.10, "{f}");
}
