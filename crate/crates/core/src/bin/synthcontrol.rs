fn main() {
    std::process::exit(synthcontrol::cli::run_from_args(std::env::args_os()));
}
