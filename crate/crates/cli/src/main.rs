use std::process::ExitCode;

fn main() -> ExitCode {
    match csilab::run(std::env::args_os()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("csilab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
