use std::ffi::{CStr, CString};
use std::ptr;

use kyle_ot_ffi::*;

fn last_error() -> String {
    let p = kot_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn scenario(toml: &str) -> *mut KotScenario {
    let text = CString::new(toml).unwrap();
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { kot_scenario_from_toml(text.as_ptr(), &mut sc) }, KotStatus::Ok);
    sc
}

fn solve(sc: *const KotScenario) -> *mut KotEquilibrium {
    let mut eq = ptr::null_mut();
    assert_eq!(unsafe { kot_solve(sc, &mut eq) }, KotStatus::Ok);
    eq
}

const ACTIVIST: &str = "T = 1.0\nsigma = 1.0\nSigma0 = 0.0\nsigma_beta = 1.7320508075688772\nfamily = \"activist\"\n";

#[test]
fn activist_constants_through_the_abi() {
    let sc = scenario(ACTIVIST);
    let eq = solve(sc);
    let mut x = 0.0;
    unsafe {
        assert_eq!(kot_lambda(eq, &mut x), KotStatus::Ok);
        assert!((x - 2.0).abs() < 1e-15);
        assert_eq!(kot_map(eq, 1.0, 0.0, &mut x), KotStatus::Ok);
        assert!((x + 0.5).abs() < 1e-15);
        assert_eq!(kot_rate(eq, 0.0, 0.0, 1.0, 0.0, &mut x), KotStatus::Ok);
        assert!((x + 1.0).abs() < 1e-14);
        assert_eq!(kot_price(eq, 0.3, 0.4, &mut x), KotStatus::Ok);
        assert!((x - 1.2).abs() < 1e-12);

        // duality on the graph of the map: Gamma^c(z) + Gamma(I(z)) = S(z, I(z))
        let (mut gc, mut g, mut y) = (0.0, 0.0, 0.0);
        assert_eq!(kot_map(eq, 0.6, 0.0, &mut y), KotStatus::Ok);
        assert_eq!(kot_dual_potential(eq, 0.6, 0.0, &mut gc), KotStatus::Ok);
        assert_eq!(kot_potential(eq, y, &mut g), KotStatus::Ok);
        assert!((gc + g - 0.5 * (y - 0.6) * (y - 0.6)).abs() < 1e-12);

        let mut law = KotGaussian::default();
        assert_eq!(kot_filter_law(eq, 0.0, 0.5, &mut law), KotStatus::Ok);
        assert!((law.mean[0] + 1.0).abs() < 1e-15 && (law.cov[0][0] - 3.0).abs() < 1e-12);

        kot_equilibrium_free(eq);
        kot_scenario_free(sc);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    let mut x = 0.0;
    let mut sc = ptr::null_mut();
    unsafe {
        assert_eq!(kot_lambda(ptr::null(), &mut x), KotStatus::NullPointer);
        assert!(last_error().contains("eq"));

        let bad = CString::new("T = 1.0\nsigma = 1.0\nSigma0 = 1.0\nfamily = \"linear\"\nbogus = 1\n").unwrap();
        assert_eq!(kot_scenario_from_toml(bad.as_ptr(), &mut sc), KotStatus::Config);
        assert!(sc.is_null());
        assert!(last_error().contains("bogus"));

        let missing = CString::new("/nonexistent/scenario.toml").unwrap();
        assert_eq!(kot_scenario_from_file(missing.as_ptr(), &mut sc), KotStatus::Io);

        // lambda = 1 activist market: no equilibrium strategy
        let sc = scenario("T = 1.0\nsigma = 1.0\nSigma0 = 0.0\nfamily = \"activist\"\n");
        let mut eq = ptr::null_mut();
        assert_eq!(kot_solve(sc, &mut eq), KotStatus::InvalidArgument);
        assert!(eq.is_null());
        kot_scenario_free(sc);

        let sc = scenario("T = 1.0\nsigma = 1.0\nSigma0 = 0.0\nfamily = \"linear\"\n");
        assert_eq!(kot_solve(sc, &mut eq), KotStatus::DegenerateSignal);
        kot_scenario_free(sc);

        let mut sc = ptr::null_mut();
        assert_eq!(kot_scenario_static_kyle(&mut sc), KotStatus::Ok);
        let eq = solve(sc);
        assert_eq!(kot_price(eq, 1.5, 0.0, &mut x), KotStatus::Horizon);
        assert_eq!(
            kot_simulate(eq, 10, 63, 0, true, ptr::null_mut()),
            KotStatus::NullPointer
        );
        let mut sum = KotSimSummary::default();
        assert_eq!(kot_simulate(eq, 10, 63, 0, true, &mut sum), KotStatus::InvalidArgument);
        kot_equilibrium_free(eq);
        kot_scenario_free(sc);

        // freeing NULL is a no-op
        kot_scenario_free(ptr::null_mut());
        kot_equilibrium_free(ptr::null_mut());
        kot_string_free(ptr::null_mut());
    }
}

#[test]
fn simulation_summary_is_deterministic() {
    let mut sc = ptr::null_mut();
    unsafe {
        assert_eq!(kot_scenario_static_kyle(&mut sc), KotStatus::Ok);
        let eq = solve(sc);
        let (mut a, mut b) = (KotSimSummary::default(), KotSimSummary::default());
        assert_eq!(kot_simulate(eq, 2000, 128, 17, true, &mut a), KotStatus::Ok);
        assert_eq!(kot_simulate(eq, 2000, 128, 17, true, &mut b), KotStatus::Ok);
        assert_eq!(a.mean_wealth.to_bits(), b.mean_wealth.to_bits());
        assert_eq!(a.qv_ratio.to_bits(), b.qv_ratio.to_bits());
        assert!(a.terminal_coupling_rms < 1e-12);
        assert!(((a.mean_wealth - 1.0) / a.mean_wealth_se).abs() < 4.0);
        assert!((a.ot_value - 1.0).abs() < 1e-14);
        kot_equilibrium_free(eq);
        kot_scenario_free(sc);
    }
}

#[test]
fn verify_returns_a_json_report() {
    let sc = scenario("T = 1.0\nsigma = 1.0\nSigma0 = 1.0\nfamily = \"linear\"\noracle = false\n");
    let mut json = ptr::null_mut();
    let mut passed = false;
    unsafe {
        assert_eq!(kot_scenario_set_sampling(sc, 1000, 256, 0, true), KotStatus::Ok);
        assert_eq!(kot_verify(sc, &mut json, &mut passed), KotStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        kot_string_free(json);
        kot_scenario_free(sc);
        let report: serde_json::Value = serde_json::from_str(&text).unwrap();
        let checks = report.as_array().unwrap();
        assert!(checks.iter().any(|c| c["name"] == "inconspicuous"));
        assert_eq!(passed, checks.iter().all(|c| c["passed"] == true));
    }
}

#[test]
fn discrete_ot_matches_enumeration() {
    // 3x3 permutation problem; the optimum pairs 0-2, 1-0, 2-1
    let surplus = [0.0, 1.0, 5.0, 4.0, 0.0, 1.0, 1.0, 3.0, 0.0];
    let third = [1.0 / 3.0; 3];
    let mut plan = [0.0; 9];
    let mut value = 0.0;
    let st = unsafe {
        kot_discrete_ot(
            surplus.as_ptr(),
            3,
            3,
            third.as_ptr(),
            third.as_ptr(),
            plan.as_mut_ptr(),
            &mut value,
        )
    };
    assert_eq!(st, KotStatus::Ok);
    assert!((value - 4.0).abs() < 1e-12);
    for (i, j) in [(0, 2), (1, 0), (2, 1)] {
        assert!((plan[3 * i + j] - 1.0 / 3.0).abs() < 1e-12);
    }
    let st = unsafe {
        kot_discrete_ot(
            surplus.as_ptr(),
            0,
            3,
            third.as_ptr(),
            third.as_ptr(),
            plan.as_mut_ptr(),
            &mut value,
        )
    };
    assert_eq!(st, KotStatus::InvalidArgument);
}
