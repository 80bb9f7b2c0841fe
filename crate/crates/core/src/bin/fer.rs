fn main() {
    std::process::exit(fer_core::cli::dispatch(std::env::args_os()));
}
