fn main() {
    std::process::exit(monofbf::cli::run(std::env::args_os()));
}
