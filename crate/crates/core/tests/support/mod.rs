//! Test-only oracles, corpus generators and a stub inference server.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use fimscan::context::{ContextWindow, Strategy};
use fimscan::corpus::{Corpus, FunctionSpan, Label, LineLabel, SourceFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// brace oracle

/// Blanks out comments and string/char literals with a whole-text state
/// machine, keeping newlines so line numbers survive.
pub fn strip_noise(text: &str) -> String {
    #[derive(PartialEq)]
    enum S {
        Code,
        Line,
        Block,
        Str(char),
    }
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut state = S::Code;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match state {
            S::Code => {
                if c == '/' && next == Some('/') {
                    state = S::Line;
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                if c == '/' && next == Some('*') {
                    state = S::Block;
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                if c == '"' || c == '\'' {
                    state = S::Str(c);
                    out.push(' ');
                } else {
                    out.push(c);
                }
            }
            S::Line => {
                if c == '\n' {
                    state = S::Code;
                    out.push('\n');
                } else {
                    out.push(' ');
                }
            }
            S::Block => {
                if c == '*' && next == Some('/') {
                    state = S::Code;
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                out.push(if c == '\n' { '\n' } else { ' ' });
            }
            S::Str(q) => {
                if c == '\\' && next.is_some_and(|n| n != '\n') {
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                if c == q {
                    state = S::Code;
                    out.push(' ');
                } else if c == '\n' {
                    // unterminated literal ends at the line break
                    state = S::Code;
                    out.push('\n');
                } else {
                    out.push(' ');
                }
            }
        }
        i += 1;
    }
    out
}

/// Matches braces by repeatedly deleting an adjacent `{` `}` pair. Returns
/// (open_line, close_line) pairs sorted.
pub fn oracle_pairs(text: &str) -> Vec<(usize, usize)> {
    let stripped = strip_noise(text);
    let mut braces: Vec<(char, usize)> = Vec::new();
    for (i, line) in stripped.split('\n').enumerate() {
        for c in line.chars() {
            if c == '{' || c == '}' {
                braces.push((c, i + 1));
            }
        }
    }
    let mut pairs = Vec::new();
    loop {
        let found = (0..braces.len().saturating_sub(1)).find(|&i| braces[i].0 == '{' && braces[i + 1].0 == '}');
        match found {
            Some(i) => {
                pairs.push((braces[i].1, braces[i + 1].1));
                braces.drain(i..i + 2);
            }
            None => break,
        }
    }
    pairs.sort();
    pairs
}

fn oracle_signature_start(lines: &[String], open: usize) -> usize {
    let mut first = open;
    for candidate in (1..open).rev() {
        if open - candidate > 10 {
            break;
        }
        let t = lines[candidate - 1].trim();
        let stops = t.is_empty() || t.starts_with('#') || t.ends_with(';') || t.ends_with('}') || t.ends_with('{');
        if stops {
            break;
        }
        first = candidate;
    }
    first
}

fn lines_between(lines: &[String], first: usize, last: usize) -> Vec<String> {
    (first..=last)
        .filter(|&l| l >= 1 && l <= lines.len())
        .map(|l| lines[l - 1].clone())
        .collect()
}

/// Enumerates every enclosing pair, keeps multi-line ones within `limit`,
/// and builds the expected window from the largest.
pub fn oracle_mcs(file: &SourceFile, line: usize, limit: usize, fallback_half: usize) -> ContextWindow {
    oracle_mcs_with(file, &oracle_pairs(&file.to_text()), line, limit, fallback_half)
}

/// [`oracle_mcs`] with the pair list precomputed.
pub fn oracle_mcs_with(
    file: &SourceFile,
    pairs: &[(usize, usize)],
    line: usize,
    limit: usize,
    fallback_half: usize,
) -> ContextWindow {
    let mut best: Option<(usize, usize)> = None;
    for &(o, c) in pairs {
        if c > o && o <= line && line <= c && c - o < limit {
            let better = match best {
                None => true,
                Some((bo, bc)) => c - o > bc - bo,
            };
            if better {
                best = Some((o, c));
            }
        }
    }
    let strategy = Strategy::Mcs { limit, fallback_half };
    let lines = &file.lines;
    match best {
        Some((o, c)) => {
            let start = oracle_signature_start(lines, o);
            ContextWindow {
                file: file.path.clone(),
                target_line: line,
                prefix_start: start,
                prefix: lines_between(lines, start, line - 1),
                suffix: lines_between(lines, line + 1, c),
                strategy,
                mcs_span: Some((o, c)),
                fell_back: false,
            }
        }
        None => {
            let start = if line > fallback_half { line - fallback_half } else { 1 };
            ContextWindow {
                file: file.path.clone(),
                target_line: line,
                prefix_start: start,
                prefix: lines_between(lines, start, line - 1),
                suffix: lines_between(lines, line + 1, line + fallback_half),
                strategy,
                mcs_span: None,
                fell_back: true,
            }
        }
    }
}

/// Random brace-balanced C-like file with braces hidden in comments and
/// literals.
pub fn random_braced_file(rng: &mut ChaCha8Rng, max_lines: usize) -> String {
    let target = rng.random_range(1..=max_lines);
    let mut lines: Vec<String> = Vec::new();
    let mut depth = 0usize;
    while lines.len() + depth < target {
        let room = target - lines.len() - depth;
        let indent = "  ".repeat(depth);
        match rng.random_range(0..14) {
            0 | 1 if room >= 2 => {
                lines.push(format!("{indent}if (x{}) {{", lines.len()));
                depth += 1;
            }
            2 if room >= 3 => {
                lines.push(format!("{indent}static int fn{}(int a,", lines.len()));
                lines.push(format!("{indent}        int b)"));
                lines.push(format!("{indent}{{"));
                depth += 1;
            }
            3 if depth > 0 => {
                depth -= 1;
                lines.push(format!("{}}}", "  ".repeat(depth)));
            }
            4 if depth > 0 => lines.push(format!("{}}} else {{", "  ".repeat(depth - 1))),
            5 => lines.push(format!("{indent}s = \"{{ \\\" }}\"; c = '{{';")),
            6 => lines.push(format!("{indent}x++; // }} {{ noise")),
            7 if room >= 3 => {
                lines.push(format!("{indent}/* open {{"));
                lines.push(format!("{indent}   }} still comment"));
                lines.push(format!("{indent}*/ y = '}}';"));
            }
            8 => lines.push(format!("{indent}{{ z = 1; }} /* {{ */")),
            9 => lines.push(String::new()),
            10 => lines.push(format!("{indent}q = '\\''; w = \"//{{\";")),
            _ => lines.push(format!("{indent}v{} = v{} + 1;", lines.len(), depth)),
        }
    }
    while depth > 0 {
        depth -= 1;
        lines.push(format!("{}}}", "  ".repeat(depth)));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

// ---------------------------------------------------------------------------
// synthetic corpus

pub const VULN_MARKER: &str = "VULN";

pub struct Synthetic {
    pub corpus: Corpus,
    pub labels: Vec<LineLabel>,
    pub functions: Vec<FunctionSpan>,
}

/// `files * per_file` functions of roughly 48 lines; `vulnerable` marked
/// lines spread over the functions (every function gets at least one).
pub fn synthetic_corpus(files: usize, per_file: usize, vulnerable: usize, comment_every: usize) -> Synthetic {
    let n_functions = files * per_file;
    assert!(vulnerable >= n_functions);
    let mut files_out = Vec::new();
    let mut labels = Vec::new();
    let mut functions = Vec::new();
    let mut fn_index = 0;
    for fi in 0..files {
        let name = format!("src/unit{fi}.c");
        let mut lines: Vec<String> = vec!["#include <stdio.h>".into(), "#include <string.h>".into(), String::new()];
        for _ in 0..per_file {
            let n = fn_index;
            // functions 0..(vulnerable - n_functions) carry a second vulnerable line
            let vuln_count = if n < vulnerable - n_functions { 2 } else { 1 };
            lines.push(format!("/* helper {n} */"));
            let start = lines.len() + 1;
            lines.push(format!("static int helper_{n}(char *buf, const char *src, int len)"));
            lines.push("{".into());
            let body_len = 44;
            let vuln_at: Vec<usize> = (0..vuln_count).map(|k| 8 + k * 17 + n % 5).collect();
            for b in 0..body_len {
                let text = if vuln_at.contains(&b) {
                    format!("    memcpy(buf + {b}, src, len + {n}); /* {VULN_MARKER} */")
                } else if comment_every > 0 && b % comment_every == 3 {
                    format!("    // step {b} of helper {n}")
                } else if b % 11 == 5 {
                    format!("    if (len > {b}) {{ len -= {n}; }}")
                } else {
                    format!("    int v{b} = len * {b} + {n};")
                };
                lines.push(text);
                if vuln_at.contains(&b) {
                    labels.push(LineLabel {
                        file: name.clone(),
                        line_no: lines.len(),
                        label: Label::Vulnerable,
                        function_id: Some(format!("helper_{n}")),
                    });
                }
            }
            lines.push("    return len;".into());
            lines.push("}".into());
            functions.push(FunctionSpan {
                id: format!("helper_{n}"),
                file: name.clone(),
                start_line: start,
                end_line: lines.len(),
            });
            lines.push(String::new());
            fn_index += 1;
        }
        let mut text = lines.join("\n");
        text.push('\n');
        files_out.push(SourceFile::from_text(name, &text));
    }
    Synthetic {
        corpus: Corpus::from_files(files_out),
        labels,
        functions,
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// stub HTTP server

#[derive(Clone, Debug)]
pub enum StubReply {
    Json(u16, String),
    /// Declares a longer body than it sends, then closes.
    Truncated(String),
    /// Sends raw bytes as the whole response.
    Raw(String),
    /// Closes without answering.
    Hangup,
}

pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<serde_json::Value>>>,
}

/// Serves each connection with `handler(request_body)` until the process
/// exits.
pub fn stub_server<F>(handler: F) -> StubServer
where
    F: Fn(&serde_json::Value) -> StubReply + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/judge", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = requests.clone();
    let handler = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let seen = seen.clone();
            let handler = handler.clone();
            thread::spawn(move || serve(stream, &*handler, &seen));
        }
    });
    StubServer { url, requests }
}

fn serve(
    mut stream: TcpStream,
    handler: &dyn Fn(&serde_json::Value) -> StubReply,
    seen: &Mutex<Vec<serde_json::Value>>,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let value: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    seen.lock().unwrap().push(value.clone());
    let response = match handler(&value) {
        StubReply::Json(status, body) => format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
        StubReply::Truncated(body) => format!(
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            body.len() + 50,
            body
        ),
        StubReply::Raw(raw) => raw,
        StubReply::Hangup => return,
    };
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}
