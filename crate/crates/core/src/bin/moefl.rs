fn main() {
    std::process::exit(moefl::cli::main_with_args(std::env::args_os()));
}
