fn main() {
    std::process::exit(ropnet::cli::run(std::env::args_os()));
}
