#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use mock_endpoint::{echo_completion, MockEndpoint, Reply, Request};
use promptjoule::energy::MeterConfig;
use promptjoule::prompt::{ConfigId, Pet, TagSpacing};
use promptjoule::runner::ExperimentPlan;
use promptjoule::{EndpointConfig, Snippet};

pub const MODEL: &str = "mock-llama3-8b-instruct";

pub const PROSE: &str = "Sure! Here is a complete class for you.\n\n\
public final class Example {\n    private final int value;\n}\n\n\
The class is final so it cannot be extended.\n\
The field holds the value passed in.\n\
You can add more methods as needed.\n\
Let me know if you need anything else!";

/// The snippet behind the tagged reference prompts.
pub fn disruptor() -> Snippet {
    Snippet {
        id: "disruptor".into(),
        context: "package com.lmax.disruptor.support;  import java.util.concurrent.ThreadFactory;".into(),
        incomplete: "public final".into(),
        ground_truth: "class DaemonThreadFactory implements ThreadFactory {".into(),
    }
}

/// Same snippet with the single-space join of the zero-shot reference prompt.
pub fn disruptor_single_space() -> Snippet {
    Snippet {
        context: "package com.lmax.disruptor.support; import java.util.concurrent.ThreadFactory;".into(),
        ..disruptor()
    }
}

pub fn example_pool() -> Vec<Snippet> {
    let rows = [
        ("ex-list", "import java.util.List;  public class Names {", "private final", "private final List<String> names;"),
        ("ex-ctr", "public class Counter {  private int count;", "public void", "public void increment() {"),
        ("ex-main", "public class App {", "public static", "public static void main(String[] args) {"),
        ("ex-log", "import java.util.logging.Logger;  public class Service {", "private static", "private static final Logger LOG = Logger.getLogger(Service.class.getName());"),
        ("ex-ret", "public int size() {", "return", "return size;"),
    ];
    rows.iter()
        .map(|(id, c, i, g)| Snippet {
            id: id.to_string(),
            context: c.to_string(),
            incomplete: i.to_string(),
            ground_truth: g.to_string(),
        })
        .collect()
}

pub fn eval_snippets(n: usize) -> Vec<Snippet> {
    (0..n)
        .map(|i| Snippet {
            id: format!("eval-{i}"),
            context: format!("public class Widget{i} {{  private int size;"),
            incomplete: "public int".into(),
            ground_truth: "public int getSize() {".into(),
        })
        .collect()
}

pub fn write_trace(dir: &Path, mw: f64) -> PathBuf {
    let path = dir.join("trace.csv");
    std::fs::write(&path, format!("offset_seconds,milliwatts\n0,{mw}\n")).unwrap();
    path
}

/// Prose for prompts without a system instruction or examples, a correct
/// completion otherwise.
pub fn scripted(req: &Request) -> Reply {
    match (req.system(), req.shot_count()) {
        (Some(""), 0) => Reply::Text(PROSE.to_string()),
        _ => {
            let user = req.last_user().unwrap_or_default();
            if user.contains("Widget") {
                Reply::Text("public int getSize() {".into())
            } else {
                Reply::Text(echo_completion(req))
            }
        }
    }
}

pub fn mock() -> MockEndpoint {
    MockEndpoint::builder().model(MODEL).responder(scripted).spawn().unwrap()
}

pub fn plan(base_url: &str, trace: &Path, snippets: usize, reps: u32) -> ExperimentPlan {
    let mut meter = MeterConfig::simulated(trace);
    meter.interval = Duration::from_millis(10);
    meter.powercap_root = PathBuf::from("/nonexistent/powercap");
    let mut endpoint = EndpointConfig::new(base_url, MODEL).unwrap();
    endpoint.request_timeout = Duration::from_secs(10);
    ExperimentPlan {
        snippets: eval_snippets(snippets),
        example_pool: example_pool(),
        pets: Pet::standard().to_vec(),
        configs: ConfigId::ALL.to_vec(),
        repetitions: reps,
        pause: 0.0,
        endpoint,
        meter,
        seed: 42,
        tag_spacing: TagSpacing::AsListed,
    }
}
