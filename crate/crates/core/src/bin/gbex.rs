fn main() {
    std::process::exit(gbex::cli::run(std::env::args_os()));
}
