fn main() {
    std::process::exit(speckle_cli::dispatch(std::env::args_os()));
}
