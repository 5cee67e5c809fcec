fn main() {
    std::process::exit(scal_core::cli::run(std::env::args_os()));
}
