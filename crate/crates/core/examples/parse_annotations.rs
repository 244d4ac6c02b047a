//! Parses the bundled Penn-Fudan and IDL fixtures, or files given on the
//! command line, and prints their boxes.
//!
//! cargo run --example parse_annotations -- [file ...]

use vishud::datasets::{parse_idl, parse_pennfudan, serialize_idl};

fn main() {
    let mut files: Vec<String> = std::env::args().skip(1).collect();
    if files.is_empty() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
        for name in [
            "pennfudan/FudanPed00001.txt",
            "pennfudan/PennPed00017.txt",
            "pennfudan/malformed_inverted.txt",
            "idl/tud_sample.idl",
            "idl/malformed_tuple.idl",
        ] {
            files.push(format!("{dir}/{name}"));
        }
    }
    for f in files {
        let text = match std::fs::read_to_string(&f) {
            Ok(t) => t,
            Err(e) => {
                println!("{f}: {e}");
                continue;
            }
        };
        println!("== {f}");
        let anns = if f.ends_with(".idl") {
            parse_idl(&text)
        } else {
            parse_pennfudan(&text).map(|a| vec![a])
        };
        match anns {
            Ok(anns) => {
                for a in &anns {
                    let boxes: Vec<String> = a.boxes.iter().map(|b| b.to_string()).collect();
                    println!("{} [{}]", a.image_path, boxes.join(", "));
                }
                print!("as IDL:\n{}", serialize_idl(&anns));
            }
            Err(e) => println!("error: {e}"),
        }
    }
}
