//! A 200-file Python tree whose filter, extraction and dedup outcomes are
//! known file by file.
//!
//! | dir        | files | outcome                                                   |
//! |------------|-------|-----------------------------------------------------------|
//! | `dups/`    | 20    | byte copies of `pkg_a/a_000..a_019`; 3 functions each     |
//! | `pkg_a/`   | 120   | 2 documented functions + 1 undocumented helper each       |
//! | `pkg_c/`   | 10    | class with 2 documented methods + 1 docstring-only def    |
//! | `pkg_h/`   | 15    | decorated outer def with nested def + async def           |
//! | `bad/syn*` | 10    | syntax error                                              |
//! | `bad/wide*`| 10    | a 1 210-character line                                    |
//! | `bad/mean*`| 10    | six 152-character comment lines + one short statement     |
//! | `big/`     | 5     | 1 200 000 bytes                                           |
//!
//! Plus two non-Python files that the scan ignores.

use std::fmt::Write as _;
use std::path::Path;

pub const FILES_SEEN: usize = 200;
pub const FILES_ACCEPTED: usize = 165;
pub const REJECTED_SYNTAX: usize = 10;
pub const REJECTED_MAX_LINE: usize = 10;
pub const REJECTED_MEAN_LINE: usize = 10;
pub const REJECTED_SIZE: usize = 5;
/// 140 x 3 + 10 x 2 + 15 x 2.
pub const FUNCTIONS_EXTRACTED: usize = 470;
pub const SKIPPED_EMPTY_BODY: usize = 10;
/// The helpers of the 140 `pkg_a`/`dups` files.
pub const NO_DOCSTRING: usize = 140;
pub const PAIRS_FORMATTED: usize = 330;
/// Two documented functions per duplicated file.
pub const DUPLICATES: usize = 40;
pub const PAIRS_EMITTED: usize = 290;

fn body(template: usize, i: usize) -> String {
    match template % 8 {
        0 => format!("return x + {i}"),
        1 => format!("total = 0\nfor v in range(x):\n    total += v * {i}\nreturn total"),
        2 => format!("if x > {i}:\n    return x - {i}\nelif x < 0:\n    return -x\nelse:\n    return {i}"),
        3 => format!("try:\n    value = int(x)\nexcept ValueError:\n    value = {i}\nreturn value"),
        4 => format!("items = [v for v in range(x) if v % 2 == 0]  # evens\nwhile len(items) > {i}:\n    items.pop()\nreturn items"),
        5 => format!("text = (\n    \"a\"\n    \"b{i}\"\n)\nreturn text * x"),
        6 => format!("with open(x) as fh:\n    data = fh.read()\n\nreturn data[:{i}]"),
        _ => format!("table = {{\"k\": {i}, \"v\": [1,\n    2]}}\nreturn table"),
    }
}

fn indent(text: &str, by: &str) -> String {
    text.lines()
        .map(|l| if l.is_empty() { String::new() } else { format!("{by}{l}") })
        .collect::<Vec<_>>()
        .join("\n")
}

fn module_a(i: usize) -> String {
    format!(
        "import os\n\n# module {i}\n\n\ndef func_{i}_a(x):\n    \"\"\"Docstring for function {i} a.\n\n    More detail on line two.\n    \"\"\"\n{}\n\n\ndef func_{i}_b(x, y=1):\n    '''Second function {i}.'''\n{}\n\n\ndef helper_{i}(y):\n    return y * 2\n",
        indent(&body(i, i), "    "),
        indent(&body(i + 3, i), "    "),
    )
}

fn module_c(i: usize) -> String {
    format!(
        "class Widget{i}:\n    \"\"\"Class docstring.\"\"\"\n\n    def method_a(self, x):\n        \"\"\"Method a of widget {i}.\"\"\"\n        return x + {i}\n\n    async def method_b(self):\n        \"\"\"Async method of widget {i}.\"\"\"\n        await something()\n        return {i}\n\n\ndef placeholder_{i}():\n    \"\"\"Only a docstring.\"\"\"\n"
    )
}

fn module_h(i: usize) -> String {
    format!(
        "@decorator\ndef outer_{i}(x):\n    \"\"\"Outer function {i}.\"\"\"\n    def inner(y):\n        \"\"\"Inner docs.\"\"\"\n        return y + 1\n    return inner(x)\n\n\nasync def fetch_{i}(url):\n    \"\"\"Fetch resource {i}.\"\"\"\n    async with session(url) as r:\n        return await r.text()\n"
    )
}

fn write(root: &Path, rel: &str, text: &str) {
    let path = root.join(rel);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

pub fn write_audit_corpus(root: &Path) {
    for i in 0..120 {
        write(root, &format!("pkg_a/a_{i:03}.py"), &module_a(i));
    }
    for i in 0..20 {
        write(root, &format!("dups/copy_{i:03}.py"), &module_a(i));
    }
    for i in 0..10 {
        write(root, &format!("pkg_c/c_{i:03}.py"), &module_c(i));
        write(root, &format!("bad/syn_{i:03}.py"), &format!("def broken_{i}(x)\n    return x\n"));
        write(
            root,
            &format!("bad/wide_{i:03}.py"),
            &format!("def f(x):\n    \"\"\"Wide.\"\"\"\n    return x\n\n\nVALUE = \"{}\"\n", "x".repeat(1200)),
        );
        let mut mean = String::new();
        for _ in 0..6 {
            writeln!(mean, "# {}", "y".repeat(150)).unwrap();
        }
        mean.push_str("x = 1\n");
        write(root, &format!("bad/mean_{i:03}.py"), &mean);
    }
    for i in 0..15 {
        write(root, &format!("pkg_h/h_{i:03}.py"), &module_h(i));
    }
    for i in 0..5 {
        write(root, &format!("big/big_{i}.py"), &"x = 1\n".repeat(200_000));
    }
    write(root, "README.txt", "not python\n");
    write(root, "pkg_a/data.json", "{}\n");
}
