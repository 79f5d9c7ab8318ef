use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("POSE2SEG_LOG", "warn")).init();
    std::process::exit(pose2seg::cli::run(std::env::args_os()));
}
