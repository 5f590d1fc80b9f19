use std::panic;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = panic::catch_unwind(|| posefield_cli::run(std::env::args_os())).unwrap_or(4);
    std::process::exit(code);
}
