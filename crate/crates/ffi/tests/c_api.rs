use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use knight_ffi::*;

fn market() -> KnightMarket {
    KnightMarket {
        spot: 100.0,
        maturity: 1.0,
        rate: 0.05,
        sigma_low: 0.2,
        sigma_high: 0.3,
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/knight.h")
}

#[test]
fn bid_ask_brute_force_and_decomposition_agree() {
    unsafe {
        let mut lattice = ptr::null_mut();
        let mut payoff = ptr::null_mut();
        assert_eq!(knight_lattice_new(&market(), 3, &mut lattice), KnightStatus::Ok);
        assert_eq!(knight_payoff_put(100.0, &mut payoff), KnightStatus::Ok);

        let mut q = KnightBidAsk::default();
        assert_eq!(knight_bid_ask(lattice, payoff, &mut q), KnightStatus::Ok);
        assert!(q.bid <= q.ask);
        let (mut up, mut lo) = (0.0, 0.0);
        assert_eq!(knight_brute_force(lattice, payoff, KnightSide::Upper, &mut up), KnightStatus::Ok);
        assert_eq!(knight_brute_force(lattice, payoff, KnightSide::Lower, &mut lo), KnightStatus::Ok);
        assert!((up - q.ask).abs() < 1e-10 && (lo - q.bid).abs() < 1e-10);

        let mut dec = ptr::null_mut();
        assert_eq!(knight_decompose(lattice, payoff, KnightSide::Upper, &mut dec), KnightStatus::Ok);
        assert_eq!(knight_decomposition_steps(dec), 3);
        let mut x0 = 0.0;
        assert_eq!(knight_decomposition_value(dec, 0, 0, &mut x0), KnightStatus::Ok);
        assert!((x0 - q.ask).abs() < 1e-12);
        let mut d = 0.0;
        assert_eq!(knight_decomposition_increment(dec, 1, -1, &mut d), KnightStatus::Ok);
        assert!(d >= 0.0);
        let mut pi = 0.0;
        assert_eq!(knight_decomposition_hedge_ratio(dec, 0, 0, &mut pi), KnightStatus::Ok);
        assert!(pi < 0.0 && pi > -1.0);
        assert_eq!(
            knight_decomposition_increment(dec, 3, 0, &mut d),
            KnightStatus::IndexOutOfRange
        );
        let mut margin = 0.0;
        assert_eq!(knight_superhedge_margin(dec, lattice, payoff, &mut margin), KnightStatus::Ok);
        assert!(margin >= -1e-9);

        knight_decomposition_free(dec);
        knight_payoff_free(payoff);
        knight_lattice_free(lattice);
    }
}

#[test]
fn oversized_brute_force_reports_too_large() {
    unsafe {
        let mut lattice = ptr::null_mut();
        let mut payoff = ptr::null_mut();
        assert_eq!(knight_lattice_new(&market(), 8, &mut lattice), KnightStatus::Ok);
        assert_eq!(knight_payoff_call(100.0, &mut payoff), KnightStatus::Ok);
        let mut v = 0.0;
        assert_eq!(knight_brute_force(lattice, payoff, KnightSide::Upper, &mut v), KnightStatus::TooLarge);
        knight_payoff_free(payoff);
        knight_lattice_free(lattice);
    }
}

#[test]
fn tabulated_payoff_and_pde_price() {
    unsafe {
        let prices = [80.0, 100.0, 120.0];
        let values = [20.0, 0.0, 0.0];
        let mut payoff = ptr::null_mut();
        assert_eq!(knight_payoff_tabulated(prices.as_ptr(), values.as_ptr(), 3, &mut payoff), KnightStatus::Ok);
        let mut f = 0.0;
        assert_eq!(knight_payoff_eval(payoff, 90.0, &mut f), KnightStatus::Ok);
        assert!((f - 10.0).abs() < 1e-12);

        let (mut pen, mut proj, mut eu) = (0.0, 0.0, 0.0);
        let m = market();
        assert_eq!(knight_pde_price(&m, payoff, 100, 50, KnightSide::Upper, KnightPdeMethod::Penalized, &mut pen), KnightStatus::Ok);
        assert_eq!(knight_pde_price(&m, payoff, 100, 50, KnightSide::Upper, KnightPdeMethod::Projected, &mut proj), KnightStatus::Ok);
        assert_eq!(knight_pde_price(&m, payoff, 100, 50, KnightSide::Upper, KnightPdeMethod::European, &mut eu), KnightStatus::Ok);
        assert!((pen - proj).abs() < 0.05);
        assert!(proj >= eu);

        let mut bad = ptr::null_mut();
        let unsorted = [100.0, 80.0];
        let status = knight_payoff_tabulated(unsorted.as_ptr(), values.as_ptr(), 2, &mut bad);
        assert_eq!(status, KnightStatus::InvalidPayoff);
        assert!(bad.is_null());
        assert_eq!(knight_payoff_tabulated(ptr::null(), values.as_ptr(), 2, &mut bad), KnightStatus::NullPointer);
        knight_payoff_free(payoff);
    }
}

#[test]
fn header_declares_the_interface() {
    let text = std::fs::read_to_string(header()).unwrap();
    for symbol in [
        "KNIGHT_H",
        "typedef struct KnightLattice KnightLattice",
        "KNIGHT_STATUS_OK = 0",
        "KNIGHT_STATUS_TOO_LARGE",
        "KNIGHT_SIDE_UPPER",
        "knight_lattice_new",
        "knight_bid_ask",
        "knight_brute_force",
        "knight_pde_price",
        "knight_g_function",
        "knight_decompose",
        "knight_last_error_message",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(header())
        .status()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(status.success());
}

/// Builds the static library, then compiles and runs `smoke.c` against it.
/// Skipped when no C compiler is installed.
#[test]
fn c_program_links_and_runs() {
    let built = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "knight-ffi", "--lib"])
        .status()
        .unwrap();
    assert!(built.success());
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let archive = profile_dir.join("libknight_ffi.a");
    assert!(archive.exists(), "{}", archive.display());
    let out = std::env::temp_dir().join(format!("knight_smoke_{}", std::process::id()));
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let Ok(status) = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8(run.stdout).unwrap();
    let v: Vec<f64> = text.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert!(v[0] <= v[1]);
}
