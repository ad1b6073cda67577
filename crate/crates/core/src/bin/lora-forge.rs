fn main() {
    std::process::exit(lora_forge::cli::main_with_args(std::env::args()));
}
