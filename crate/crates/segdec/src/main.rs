fn main() {
    std::process::exit(segdec::cli::dispatch(std::env::args_os()));
}
