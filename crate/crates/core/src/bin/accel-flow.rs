fn main() {
    std::process::exit(accel_flow::cli::run(std::env::args_os()));
}
