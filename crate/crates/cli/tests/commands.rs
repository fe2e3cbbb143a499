use microdiff_cli::report::{value_from_json, value_to_json, Report};
use microdiff_cli::run;
use serde_json::Value as Json;

fn cli(args: &[&str]) -> (String, i32) {
    let mut v = vec!["microdiff"];
    v.extend_from_slice(args);
    run(v)
}

fn cli_json(args: &[&str]) -> (Report, i32) {
    let mut v = args.to_vec();
    v.push("--json");
    let (out, code) = cli(&v);
    (serde_json::from_str(&out).expect("valid report"), code)
}

#[test]
fn char_of_d_minus_x() {
    let (out, code) = cli(&["char", "--p", "2", "--level", "0", "--rel", "d1 - x1"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("Char^(0): zero-section\n"), "{out}");
    let (rep, _) = cli_json(&["char", "--p", "2", "--level", "0", "--rel", "d1 - x1"]);
    assert_eq!(rep.schema, "microdiff-report/1");
    for key in ["level", "char_class", "generators", "support_verdicts", "certificates", "bounds", "flags"] {
        assert!(rep.result.get(key).is_some(), "missing {key}");
    }
    assert_eq!(rep.result["char_class"], "zero-section");
}

#[test]
fn verify_counterexample_passes() {
    let (out, code) = cli(&["verify-counterexample", "--p", "2", "--nmax", "30"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("all checks pass"));
}

#[test]
fn member_example() {
    let (out, code) = cli(&["member", "--P", "Tinv2(xi1,1,2)", "--m", "0", "--mprime", "1"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("InEmm'"), "{out}");
    let (out, _) = cli(&["member", "--P", "D1[1,2]*Tinv(xi1,1,1)^0", "--m", "0", "--mprime", "1"]);
    assert!(out.starts_with("OnlyInEm'"), "{out}");
}

#[test]
fn mul_examples() {
    assert_eq!(cli(&["mul", "d1 - x1"]).0, "d1 - x1\n");
    assert_eq!(cli(&["mul", "--p", "2", "D1[1,2]*D1[1,2]"]).0, "3*D1[1,4]\n");
    assert_eq!(cli(&["mul", "--p", "2", "D1[1,2]", "D1[1,2]"]).0, "3*D1[1,4]\n");
    let (out, _) = cli(&["mul", "Tinv(xi1, m=0) * x1"]);
    assert!(out.starts_with("T^-1*x1\n"), "{out}");
    let (out, _) = cli(&["mul", "d1", "Tinv(xi1, m=0) * x1"]);
    assert!(out.starts_with("x1\n"), "{out}");
}

#[test]
fn precision_reduces_operators() {
    let (out, _) = cli(&["mul", "--p", "3", "--precision", "1", "3*d1^3 + 4*x1"]);
    assert_eq!(out, "x1\n");
}

#[test]
fn symbol_and_levelmap() {
    let (out, code) = cli(&["symbol", "--p", "2", "x1*d1^2 + d1"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("order 2"), "{out}");
    let (out, _) = cli(&["levelmap", "--p", "2", "d1^2", "--to", "1"]);
    assert_eq!(out, "2*D1[1,2]\n");
    let (out, _) = cli(&["levelmap", "--p", "2", "D1[1,2]", "--to", "0", "--rational"]);
    assert_eq!(out, "1/2*d1^2\n");
}

#[test]
fn psi_and_invert() {
    let (out, code) = cli(&["psi", "--p", "2", "Tinv(xi1,1,1)", "--to", "0"]);
    assert_eq!(code, 0);
    assert_eq!(out, "2*T^-1\nintegral: true\n");
    let (rep, code) = cli_json(&["invert", "--p", "2", "d1 - x1", "--window-floor", "-8"]);
    assert_eq!(code, 0);
    assert_eq!(rep.result["inverted"], true);
    let (rep, code) = cli_json(&["invert", "--p", "2", "--level", "1", "d1 - x1", "--window-floor", "-8"]);
    assert_eq!(code, 0);
    assert_eq!(rep.result["inverted"], false);
}

#[test]
fn normcalc_command() {
    let (out, code) = cli(&["normcalc-bounds", "--p", "2", "--m", "0", "--mprime", "1", "--k", "1", "--observed"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("bounds certified on the scan: true"), "{out}");
}

#[test]
fn stability_and_supp() {
    let (rep, code) = cli_json(&["stability", "--p", "2", "--rel", "x1*d1 - 1", "--mprime-max", "1"]);
    assert!(code == 0 || code == 2);
    assert_eq!(rep.result["rows"].as_array().unwrap().len(), 2);
    let (out, code) = cli(&["supp", "--p", "2", "--rel", "1"]);
    assert_eq!(code, 0);
    assert!(out.contains("level 0: support generic vanishes"), "{out}");
}

#[test]
fn exit_codes() {
    // a floor above 0 hides the orders that decide membership
    let (out, code) = cli(&["member", "--P", "1/4*Tinv(xi1,1,1)^0", "--m", "0", "--mprime", "1", "--window-floor", "3"]);
    assert_eq!(code, 2);
    assert!(out.starts_with("Undetermined"), "{out}");
    let (out, code) = cli(&["member", "--P", "1/4*D1[1,3]*Tinv(xi1,1,1)^0", "--m", "0", "--mprime", "1", "--window-floor", "2"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("NotInEm'"), "{out}");
    let (out, code) = cli(&["mul", "d1 + $"]);
    assert_eq!(code, 1);
    assert!(out.contains("parse error at 5..6"), "{out}");
    let (_, code) = cli(&["mul", "--p", "4", "d1"]);
    assert_eq!(code, 1);
    let (_, code) = cli(&["no-such-command"]);
    assert_eq!(code, 1);
    let (rep, code) = cli_json(&["mul", "D1[1,2] + D1[2,4]"]);
    assert_eq!(code, 1);
    assert_eq!(rep.status, microdiff_cli::report::Status::Error);
}

#[test]
fn bindings_and_config() {
    let (out, _) = cli(&["mul", "--bind", "P=d1 - x1", "P*P"]);
    assert_eq!(out, "d1^2 - 2*x1*d1 + x1^2 - 1\n");
    let dir = std::env::temp_dir().join(format!("microdiff-config-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("session.toml");
    std::fs::write(&path, "p = 3\nlevel = 1\n[bind]\nQ = \"D1[1,3]\"\n").unwrap();
    let path = path.to_str().unwrap();
    let (out, _) = cli(&["mul", "--config", path, "Q*Q"]);
    assert_eq!(out, "10*D1[1,6]\n");
    // the flag wins over the file
    let (rep, _) = cli_json(&["mul", "--config", path, "--p", "5", "d1"]);
    assert_eq!(rep.config["p"], 5);
    assert_eq!(rep.config["level"], 1);
    std::fs::write(dir.join("bad.toml"), "prime = 3\n").unwrap();
    let (_, code) = cli(&["mul", "--config", dir.join("bad.toml").to_str().unwrap(), "d1"]);
    assert_eq!(code, 1);
}

#[test]
fn json_round_trips() {
    for expr in [
        "x1^2*D1[1,3] - 5/3*d1 + 7",
        "Tinv(xi1, m=0) * x1",
        "T(xi1, 1, 2) + 2*Tinv2(xi1, 1, 2)",
        "(d1 - x1)*Tinv(x1*xi1, 0, 0, side=left)",
        "2*xi1[2] + x1",
        "x1^(-2) + 1/9",
    ] {
        let (rep, code) = cli_json(&["mul", "--p", "3", expr]);
        assert_eq!(code, 0, "{expr}");
        let v = value_from_json(&rep.result).unwrap();
        let again = value_to_json(&v);
        assert_eq!(
            serde_json::to_string(&again).unwrap(),
            serde_json::to_string(&rep.result).unwrap(),
            "{expr}"
        );
        let text: Json = serde_json::from_str(&serde_json::to_string_pretty(&rep).unwrap()).unwrap();
        let back: Report = serde_json::from_value(text).unwrap();
        assert_eq!(back, rep);
    }
}

#[test]
fn output_is_deterministic() {
    let cases: &[&[&str]] = &[
        &["mul", "--p", "2", "(d1 - x1)*Tinv(xi1, m=0)"],
        &["char", "--p", "2", "--level", "1", "--rel", "d1 - x1", "--json"],
        &["battery", "--seed", "7", "--cases", "5", "--json"],
        &["verify-counterexample", "--nmax", "8", "--json"],
    ];
    for args in cases {
        assert_eq!(cli(args), cli(args), "{args:?}");
    }
}

#[test]
fn battery_passes() {
    let (out, code) = cli(&["battery", "--seed", "1", "--cases", "20"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out, "20 cases, 0 failed\n");
}
