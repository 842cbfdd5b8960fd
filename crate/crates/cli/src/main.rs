use std::process::ExitCode;

fn main() -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr();
    let code = soapbridge_cli::run(std::env::args_os(), &mut stdout, &mut stderr, &mut |handle| {
        if let Err(e) = ctrlc::set_handler(move || handle.shutdown()) {
            eprintln!("warning: cannot install interrupt handler: {e}");
        }
    });
    ExitCode::from(code)
}
