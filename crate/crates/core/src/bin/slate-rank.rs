fn main() {
    std::process::exit(slate_rank::cli::main_with(std::env::args_os()));
}
