fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOTION2D_LOG", "warn")).init();
    std::process::exit(motion2d::cli::run(std::env::args_os()));
}
