fn main() {
    std::process::exit(fleetplan::harness::cli::run(std::env::args_os()));
}
