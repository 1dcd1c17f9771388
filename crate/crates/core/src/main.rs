fn main() {
    std::process::exit(skillgraph::cli::main_with_args(std::env::args_os()));
}
