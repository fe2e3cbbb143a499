fn main() {
    let (out, code) = microdiff_cli::run(std::env::args_os());
    print!("{out}");
    std::process::exit(code);
}
