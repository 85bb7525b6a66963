fn main() { std::process::exit(symact::cli::run(std::env::args_os())); }
