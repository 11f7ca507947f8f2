fn main() {
    env_logger::init();
    std::process::exit(sentinel_cli::dispatch(std::env::args_os()));
}
