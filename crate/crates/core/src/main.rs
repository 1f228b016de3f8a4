fn main() {
    std::process::exit(dofsim::harness::cli(std::env::args_os()));
}
