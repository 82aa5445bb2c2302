fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("RINGPLAN_LOG")).init();
    std::process::exit(ringplan::cli::run_cli(std::env::args_os()));
}
