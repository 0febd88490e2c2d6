//! `mock-endpoint [--port N] [--model NAME]...`
//!
//! Serves the echo responder until interrupted. Prompts without a system
//! instruction and without examples get a multi-paragraph prose answer.

use mock_endpoint::{echo_completion, MockEndpoint, Reply};

const PROSE: &str = "Sure! Here is how you could complete the snippet.\n\n\
public final class Example {\n    private int value;\n}\n\n\
This declares a final class.\nThe field stores the value.\nLet me know if you need anything else!";

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut builder = MockEndpoint::builder();
    let mut any_model = false;
    while let Some(arg) = args.next() {
        let value = args.next().unwrap_or_else(|| usage(&format!("{arg} needs a value")));
        match arg.as_str() {
            "--port" => builder = builder.port(value.parse().unwrap_or_else(|_| usage("bad port"))),
            "--model" => {
                builder = builder.model(value);
                any_model = true;
            }
            other => usage(&format!("unknown argument {other}")),
        }
    }
    if !any_model {
        builder = builder.model("mock-llama3-8b-instruct");
    }
    let server = builder
        .responder(|req| match (req.system(), req.shot_count()) {
            (Some(""), 0) => Reply::Text(PROSE.to_string()),
            _ => Reply::Text(echo_completion(req)),
        })
        .spawn()?;
    println!("mock endpoint listening on {}", server.base_url());
    loop {
        std::thread::park();
    }
}

fn usage(msg: &str) -> ! {
    eprintln!("{msg}\nusage: mock-endpoint [--port N] [--model NAME]...");
    std::process::exit(2)
}
