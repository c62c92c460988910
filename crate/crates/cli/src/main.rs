fn main() {
    if let Err(e) = ttga_cli::run_args(std::env::args_os()) {
        let msg = e.to_string();
        if !msg.is_empty() {
            eprintln!("ttga: {msg}");
        }
        let code = match &e {
            ttga_cli::CliError::Other(m) if m.is_empty() => 0,
            _ => e.exit_code(),
        };
        std::process::exit(code);
    }
}
