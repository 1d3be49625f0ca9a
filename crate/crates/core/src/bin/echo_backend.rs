//! Minimal protocol backend used to exercise the wire format.
//!
//! `inpaint` returns the request color unchanged; `depth` returns
//! `256 * red + green` millimeters per pixel, so tests can route exact depth
//! values through the color channel.

use std::io::{stdin, stdout, Write};
use std::thread::sleep;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, ValueEnum};
use image::{ImageBuffer, ImageFormat, Luma};
use prim2room::synth::protocol::{decode_png, encode_png, read_message, write_message};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Echo,
    /// Sleep before every reply.
    Sleep,
    /// Reply with bytes that are not JSON.
    Garbage,
    /// Reply with JSON lacking the expected field.
    Incomplete,
    /// Exit without replying.
    Exit,
}

#[derive(Parser)]
struct Args {
    #[arg(long, value_enum, default_value = "echo")]
    mode: Mode,
    #[arg(long, default_value_t = 10_000)]
    sleep_ms: u64,
}

fn depth_from_color(request: &Value) -> anyhow::Result<Vec<u8>> {
    let png = decode_png("color", request)?;
    let rgb = image::load_from_memory_with_format(&png, ImageFormat::Png)?.to_rgb8();
    let depth = ImageBuffer::<Luma<u16>, _>::from_fn(rgb.width(), rgb.height(), |x, y| {
        let p = rgb.get_pixel(x, y).0;
        Luma([256 * p[0] as u16 + p[1] as u16])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    depth.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn reply(request: &Value) -> anyhow::Result<Value> {
    match request.get("op").and_then(Value::as_str) {
        Some("inpaint") => {
            let color = request.get("color").cloned().ok_or_else(|| anyhow!("missing color"))?;
            Ok(json!({ "color": color }))
        }
        Some("depth") => Ok(json!({ "depth": encode_png(&depth_from_color(request)?) })),
        other => Ok(json!({ "error": format!("unknown op {other:?}") })),
    }
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let mut input = stdin().lock();
    let mut output = stdout().lock();
    while let Some(body) = read_message(&mut input).context("reading request")? {
        let response = match args.mode {
            Mode::Exit => return Ok(()),
            Mode::Garbage => b"this is not json".to_vec(),
            Mode::Incomplete => br#"{"status":"ok"}"#.to_vec(),
            Mode::Sleep => {
                sleep(Duration::from_millis(args.sleep_ms));
                serde_json::to_vec(&reply(&serde_json::from_slice(&body)?)?)?
            }
            Mode::Echo => {
                let value = match serde_json::from_slice::<Value>(&body) {
                    Ok(request) => reply(&request).unwrap_or_else(|e| json!({ "error": e.to_string() })),
                    Err(e) => json!({ "error": format!("bad request: {e}") }),
                };
                serde_json::to_vec(&value)?
            }
        };
        write_message(&mut output, &response)?;
        output.flush()?;
    }
    Ok(())
}
