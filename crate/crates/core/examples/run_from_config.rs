//! Drives the batch front end programmatically: writes a TOML config and
//! runs `run` and `verify --suite besov` on it, as the `snls` binary would.

fn main() {
    let dir = std::path::Path::new("out/run_from_config");
    std::fs::create_dir_all(dir).expect("create output directory");
    let cfg = dir.join("config.toml");
    std::fs::write(
        &cfg,
        r#"
experiment = "demo"
output = "out/run_from_config"

[grid]
L = 8.0
N = 128

[model]
lambda = -1.0
sigma = 0.4

[noise]
eps = 0.25
seed = 5

[time]
T = 0.2
dt = 1e-3
snapshot_every = 20

[studies]
suites = ["besov", "conservation", "localization"]
delta = 0.1
"#,
    )
    .expect("write config");
    let cfg = cfg.to_string_lossy().to_string();
    let code = snls::cli::main_with_args(["snls", "run", &cfg, "--force"]);
    println!("run exited with {code}");
    let code = snls::cli::main_with_args(["snls", "verify", &cfg, "--force", "--output", "out/run_from_config/verify"]);
    println!("verify exited with {code}; see out/run_from_config/verify/demo/summary.json");
}
