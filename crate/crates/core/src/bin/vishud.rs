fn main() {
    std::process::exit(vishud::cli::run(std::env::args_os()));
}
