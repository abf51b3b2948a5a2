fn main() {
    std::process::exit(dynlink::cli::cli_main(std::env::args_os()));
}
