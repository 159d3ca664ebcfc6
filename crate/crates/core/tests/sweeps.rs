use std::fs;

use superbunch::run::sweep;

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

fn numbers(csv: &str, name: &str) -> Vec<f64> {
    column(csv, name).iter().map(|s| s.parse().unwrap()).collect()
}

fn run_sweep(body: &str) -> String {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep(&body.parse().unwrap(), 17, dir.path()).unwrap();
    assert!(rows.iter().all(|r| r.outcome.is_ok()));
    fs::read_to_string(dir.path().join("sweep.csv")).unwrap()
}

#[test]
fn drive_voltage_sweep_raises_g2() {
    let csv = run_sweep(
        r#"
[modulation]
kind = "eom"
waveform = "sinusoid"
frequency_hz = 50e3
v_pp = 0.0
[speckle]
bandwidth_hz = 5e3
[detection]
rate = 5e4
duration_s = 2.0
[correlator]
window_s = 100e-6
bin_s = 200e-9
[analysis]
model = "none"
[sweep]
parameter = "modulation.v_pp"
values = [0.0, 2.0, 4.0, 6.0, 8.0]
"#,
    );
    let g = numbers(&csv, "g2_zero");
    let s = numbers(&csv, "g2_zero_sigma");
    for i in 1..g.len() {
        assert!(
            g[i] > g[i - 1] - 2.0 * (s[i] * s[i] + s[i - 1] * s[i - 1]).sqrt(),
            "{g:?}"
        );
    }
    // Ten batch means make sigma itself uncertain by about a quarter.
    for (k, v_pp) in [0.0, 2.0, 4.0, 6.0, 8.0].into_iter().enumerate() {
        let expected = eom_sinusoid_g2(v_pp);
        assert!(
            (g[k] - expected).abs() < 4.0 * s[k],
            "{v_pp} V: {} vs {expected} ({s:?})",
            g[k]
        );
    }
}

// 2<V_D^2>/<V_D>^2 over one drive period, by direct quadrature of the transfer curve.
fn eom_sinusoid_g2(v_pp: f64) -> f64 {
    let n = 100_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for k in 0..n {
        let v = 0.5 * v_pp * (std::f64::consts::TAU * k as f64 / n as f64).sin();
        let d = 2.04 + 1.92 * (std::f64::consts::PI * (v - 0.49) / 8.65).sin();
        s1 += d;
        s2 += d * d;
    }
    2.0 * (s2 / n as f64) / (s1 / n as f64).powi(2)
}

#[test]
fn sinusoid_frequency_does_not_move_g2() {
    let csv = run_sweep(
        r#"
[modulation]
kind = "sinusoid"
depth = 0.9
frequency_hz = 10e3
[speckle]
bandwidth_hz = 10e3
[detection]
rate = 1e5
duration_s = 1.0
[correlator]
window_s = 20e-6
bin_s = 100e-9
[analysis]
model = "none"
[sweep]
parameter = "modulation.frequency_hz"
values = [10e3, 30e3, 90e3]
"#,
    );
    let g = numbers(&csv, "g2_zero");
    let s = numbers(&csv, "g2_zero_sigma");
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            assert!(
                (g[i] - g[j]).abs() < 3.0 * (s[i] * s[i] + s[j] * s[j]).sqrt(),
                "{g:?} {s:?}"
            );
        }
    }
}

#[test]
fn realistic_noise_bandwidth_sweep_stays_below_four() {
    let csv = run_sweep(
        r#"
[modulation]
kind = "band_noise"
cutoff_hz = 100.0
realistic = true
[speckle]
bandwidth_hz = 2e3
[detection]
rate = 3e3
duration_s = 40.0
[correlator]
window_s = 10e-3
bin_s = 20e-6
[sweep]
parameter = "modulation.cutoff_hz"
values = [100.0, 200.0, 400.0]
"#,
    );
    let g = numbers(&csv, "g2_zero");
    let s = numbers(&csv, "g2_zero_sigma");
    assert!(g.iter().zip(&s).all(|(g, s)| g + 3.0 * s < 4.0 && *g > 2.0), "{g:?}");
    assert_eq!(column(&csv, "parameter"), vec!["cutoff_hz"; 3]);
    assert!(column(&csv, "status").iter().all(|s| s == "ok"), "{csv}");
}
