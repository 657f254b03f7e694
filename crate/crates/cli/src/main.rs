fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(cedg_cli::app::main_with(std::env::args_os()));
}
