use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lipbound::oracle::exact_svd_sigma1;
use lipbound::rng;
use lipbound::special::erf;
use lipbound::DenseMatrix;
use lipbound_cli::input::write_npy;
use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lipbound-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipbound")).args(args).output().unwrap()
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn num(v: &Value, path: &[&str]) -> f64 {
    let mut cur = v;
    for k in path {
        cur = &cur[*k];
    }
    cur.as_f64().unwrap_or_else(|| panic!("{path:?} missing in {v}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn one_hot(path: &Path, counts: &[usize]) {
    let c = counts.len();
    let mut data = Vec::new();
    for (j, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            data.extend((0..c).map(|i| if i == j { 1.0 } else { 0.0 }));
        }
    }
    write_npy(path, &[data.len() / c, c], &data).unwrap();
}

#[test]
fn dense_identity_fixture_is_one() {
    let d = scratch("identity");
    let id = d.join("identity.npy");
    write_npy(&id, &[4, 4], DenseMatrix::identity(4).data()).unwrap();
    let v = json(&["specnorm-dense", s(&id), "--method", "gi", "--iters", "12"]);
    assert!((num(&v, &["value"]) - 1.0).abs() <= 1e-10, "{v}");
}

#[test]
fn dense_identity_and_random_fixture() {
    let d = scratch("dense");
    let id = d.join("identity.npy");
    write_npy(&id, &[4, 4], DenseMatrix::identity(4).data()).unwrap();
    // Flat spectrum: the Frobenius readout leaves the multiplicity behind.
    let v = json(&["specnorm-dense", s(&id), "--method", "gi", "--iters", "12"]);
    assert!((num(&v, &["value"]) - 2f64.powf(2f64.powi(-11))).abs() <= 1e-14);
    assert_eq!(v["direction"], "upper_bound");
    assert!(v["wall_time_ms"].is_null());
    let one = d.join("one.npy");
    write_npy(&one, &[1, 1], &[1.0]).unwrap();
    assert_eq!(num(&json(&["specnorm-dense", s(&one)]), &["value"]), 1.0);

    let mut r = rng::seeded(7);
    let data = rng::normal_vec(&mut r, 200 * 100);
    let w = d.join("random.npy");
    write_npy(&w, &[200, 100], &data).unwrap();
    let gi = num(&json(&["specnorm-dense", s(&w), "--method", "gi"]), &["value"]);
    let svd = num(&json(&["specnorm-dense", s(&w), "--method", "svd"]), &["value"]);
    let pi = num(&json(&["specnorm-dense", s(&w), "--method", "pi"]), &["value"]);
    assert!(gi >= svd * (1.0 - 1e-12), "{gi} < {svd}");
    assert!(pi <= svd * (1.0 + 1e-9));
    let timed = json(&["specnorm-dense", s(&w), "--timing"]);
    assert!(num(&timed, &["wall_time_ms"]) >= 0.0);
}

#[test]
fn conv_examples() {
    let d = scratch("conv");
    let delta = d.join("delta.npy");
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    write_npy(&delta, &[1, 1, 3, 3], &k).unwrap();
    for pad in ["circ", "zero"] {
        let v = json(&["specnorm-conv", s(&delta), "--padding", pad, "--n", "8", "--iters", "8"]);
        assert!((num(&v, &["bound", "value"]) - 1.0).abs() < 1e-10, "{pad}: {v}");
    }

    let mut r = rng::seeded(3);
    let f = d.join("filter.npy");
    write_npy(&f, &[2, 2, 3, 3], &rng::normal_vec(&mut r, 36)).unwrap();
    let red = json(&["specnorm-conv", s(&f), "--approx", "reduced", "--n", "32", "--n0", "8", "--iters", "2"]);
    assert_eq!(red["method"], "reduced_input");
    assert!(num(&red, &["factor"]) > 1.0);
    let circ = num(&json(&["specnorm-conv", s(&f), "--padding", "circ", "--n", "32", "--iters", "12"]), &["bound", "value"]);
    assert!(num(&red, &["bound", "value"]) >= circ * (1.0 - 1e-12));
}

#[test]
fn rescale_examples() {
    let d = scratch("rescale");
    let id = d.join("identity.npy");
    write_npy(&id, &[3, 3], DenseMatrix::identity(3).data()).unwrap();
    let v = json(&["rescale", s(&id), "--t", "1"]);
    assert!(v["r"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(1.0)));
    assert!((num(&v, &["sigma1_after"]) - 1.0).abs() < 1e-12);

    let mut r = rng::seeded(9);
    let w = DenseMatrix::new(6, 4, rng::normal_vec(&mut r, 24)).unwrap();
    let p = d.join("w.npy");
    write_npy(&p, &[6, 4], w.data()).unwrap();
    let v = json(&["rescale", s(&p), "--t", "1"]);
    let got: Vec<f64> = v["r"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let wtw = w.transpose().matmul(&w).unwrap();
    for (i, g) in got.iter().enumerate() {
        let row: f64 = (0..4).map(|j| wtw.get(i, j).abs()).sum();
        assert!((g - row.powf(-0.5)).abs() <= 1e-14);
    }
    for t in ["0", "3", "6"] {
        let after = num(&json(&["rescale", s(&p), "--t", t]), &["sigma1_after"]);
        assert!(after <= 1.0 + 1e-10);
        let r = json(&["rescale", s(&p), "--t", t])["r"].clone();
        let rv: Vec<f64> = r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((exact_svd_sigma1(&w.mul_diag(&rv).unwrap()).unwrap() - after).abs() < 1e-14);
    }

    let filt = d.join("filter.npy");
    write_npy(&filt, &[1, 1, 3, 3], &[0.0; 9]).unwrap();
    assert_eq!(run(&["rescale", s(&filt)]).status.code(), Some(2));
}

#[test]
fn pub_manifests() {
    let d = scratch("pub");
    let write = |name: &str, body: &str| {
        let p = d.join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let pool = write("pool.json", r#"{"layers":[{"type":"pool"}]}"#);
    assert_eq!(num(&json(&["pub", s(&pool)]), &["total"]), 1.0);

    let m = d.join("m.npy");
    write_npy(&m, &[2, 2], &[2.0, 0.0, 0.0, 1.0]).unwrap();
    let bn = write(
        "bn.json",
        r#"{"t":20,"layers":[{"type":"dense","file":"m.npy"},
            {"type":"batchnorm","gamma":[0.5,-1.0],"running_var":[3.0,0.0],"eps":1.0},
            {"type":"activation"}]}"#,
    );
    let v = json(&["pub", s(&bn)]);
    // 2 * max(0.5/2, 1/1)
    assert!((num(&v, &["total"]) - 2.0).abs() < 1e-12);
    assert_eq!(v["per_layer"].as_array().unwrap().len(), 3);

    let res = write(
        "res.json",
        r#"{"t":20,"layers":[{"type":"residual","layers":[{"type":"dense","matrix":[[2.0,0.0],[0.0,1.0]]}]}]}"#,
    );
    assert!((num(&json(&["pub", s(&res)]), &["total"]) - 3.0).abs() < 1e-12);

    let bad = write("bad.json", r#"{"layers":[{"type":"mystery"}]}"#);
    assert_eq!(run(&["pub", s(&bad)]).status.code(), Some(2));
}

#[test]
fn certify_examples() {
    let d = scratch("certify");
    let unanimous = d.join("unanimous.npy");
    one_hot(&unanimous, &[1000, 0, 0]);
    let v = json(&["certify", "--samples", s(&unanimous), "--sigma", "0.5"]);
    assert!(num(&v, &["radius"]) > 0.0);
    assert_eq!(v["predicted"], 0);

    let uniform = d.join("uniform.csv");
    let mut body = String::from("a,b,c\n");
    for _ in 0..500 {
        body.push_str("0.3333333333333333,0.3333333333333333,0.3333333333333333\n");
    }
    std::fs::write(&uniform, body).unwrap();
    for ci in ["hoeffding", "bernstein"] {
        let v = json(&["certify", "--samples", s(&uniform), "--sigma", "0.5", "--ci", ci]);
        assert_eq!(num(&v, &["radius"]), 0.0);
    }

    let sel = d.join("sel.npy");
    one_hot(&sel, &[50, 30, 10, 10]);
    let est = d.join("est.npy");
    one_hot(&est, &[5000, 3000, 1000, 1000]);
    let v = json(&["certify", "--procedure", "cpm", "--selection", s(&sel), "--samples", s(&est), "--sigma", "1"]);
    assert_eq!(v["meta"]["c_star"], 3);

    let mono = json(&["certify", "--procedure", "mono", "--samples", s(&est), "--sigma", "1"]);
    assert_eq!(mono["radius_kind"], "mono");

    let mut r = rng::seeded(4);
    let logits = |r: &mut _, n: usize| {
        let mut v = Vec::new();
        for _ in 0..n {
            let z = rng::normal_vec(r, 3);
            v.extend([3.0 + 0.3 * z[0], 0.3 * z[1], 0.3 * z[2]]);
        }
        v
    };
    let l0 = d.join("l0.npy");
    write_npy(&l0, &[100, 3], &logits(&mut r, 100)).unwrap();
    let l1 = d.join("l1.npy");
    write_npy(&l1, &[2000, 3], &logits(&mut r, 2000)).unwrap();
    let v = json(&[
        "certify", "--procedure", "lvmrs", "--selection", s(&l0), "--samples", s(&l1), "--sigma", "0.5",
        "--temps", "0.1:10:5",
    ]);
    assert!(num(&v, &["radius"]) > 0.0);
    assert!(v["meta"]["map"].is_string());

    assert_eq!(run(&["certify", "--procedure", "cpm", "--samples", s(&est), "--sigma", "1"]).status.code(), Some(2));
    assert_eq!(run(&["certify", "--samples", s(&d.join("missing.npy")), "--sigma", "1"]).status.code(), Some(2));
}

#[test]
fn smoothbound_examples() {
    let sigma_star = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let erf_const = erf(std::f64::consts::PI.sqrt() / 2.0);
    let v = json(&["smoothbound", "--bound", "erf", "--l", "1", "--sigma", &sigma_star.to_string()]);
    assert!((num(&v, &["value"]) - erf_const).abs() < 1e-12);
    let v = json(&["smoothbound", "--bound", "optimal-sigma", "--l", "1"]);
    assert!((num(&v, &["sigma_star"]) - 0.39894).abs() < 1e-5);
    assert!((num(&v, &["gain"]) - 1.0 / erf_const).abs() < 1e-12);
    let v = json(&["smoothbound", "--bound", "bounded", "--sigma", "1"]);
    assert!((num(&v, &["value"]) - 0.79788).abs() < 1e-5);
    let v = json(&["smoothbound", "--bound", "ce", "--logits", "1,-2,0.5", "--label", "0", "--h-norm-sq", "2", "--sigma", "0.1"]);
    assert!(num(&v, &["value"]) > 0.0);

    assert_eq!(run(&["smoothbound", "--bound", "bounded", "--sigma", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["smoothbound", "--bound", "local-quantile", "--p", "1.5", "--l", "1", "--sigma", "1"]).status.code(), Some(2));
}

#[test]
fn numeric_failures_exit_three() {
    let d = scratch("numeric");
    let z = d.join("zero.npy");
    write_npy(&z, &[3, 3], &[0.0; 9]).unwrap();
    let out = run(&["specnorm-dense", s(&z), "--method", "pi"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("lipbound: "));
}

#[test]
fn repro_convergence_is_monotone() {
    let out = run(&["repro", "--figure", "3.3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let head: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(head[..3], ["iter", "gi_error", "gi_std"]);
    assert!(head.contains(&"pi_error".to_string()));
    let gi: Vec<f64> =
        rdr.records().filter_map(|r| r.unwrap()[1].parse::<f64>().ok()).collect();
    assert_eq!(gi.len(), 12);
    assert!(gi.windows(2).all(|w| w[1] <= w[0]), "{gi:?}");

    let out = run(&["repro", "--figure", "4.10"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let head: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(head, ["i", "aol", "sr_t2", "sr_t3", "sr_t4", "sn"]);
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows[0].iter().all(|&x| (x - 1.0).abs() < 1e-12));
    assert!(rows.iter().flatten().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
    // Rescaling flattens the profile relative to spectral normalisation.
    let mean = |j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
    for j in 1..4 {
        assert!(mean(j) >= mean(4), "column {j}");
    }
}

#[test]
fn output_flag_writes_file() {
    let d = scratch("output");
    let o = d.join("out.json");
    let out = run(&["smoothbound", "--bound", "bounded", "--sigma", "2", "-o", s(&o)]);
    assert!(out.status.success() && out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&o).unwrap()).unwrap();
    assert_eq!(v["bound"], "bounded");
}
