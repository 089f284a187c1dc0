fn main() {
    std::process::exit(fedcmp::cli::dispatch(std::env::args_os()));
}
