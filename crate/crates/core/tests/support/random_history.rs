//! Seeded random repository scripts for property tests. Branch commits only
//! touch files created on that branch, so every merge is conflict-free.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROSTER: &str = "ana | Ana Lima | ana@example.com\nben | Ben Ode | ben@example.com\ncara | Cara Diaz | cara@example.com\n";

const AUTHORS: &[&str] = &[
    "Ana Lima <ana@example.com>",
    "Ben Ode <ben@example.com>",
    "Cara Diaz <cara@example.com>",
    "Dee Outsider <dee@elsewhere.org>",
];

type Files = BTreeMap<String, Vec<String>>;

struct Gen {
    rng: ChaCha8Rng,
    out: String,
    next_id: usize,
}

impl Gen {
    fn line(&mut self) -> String {
        let n = self.rng.gen_range(0..50);
        match self.rng.gen_range(0..6) {
            0 => format!("def f_{n}():"),
            1 => format!("    return {n}"),
            2 => format!("# note {n}"),
            3 => format!("if x_{n} > {}:", self.rng.gen_range(0..9)),
            _ => format!("x_{n} = {}", self.rng.gen_range(0..100)),
        }
    }

    fn lines(&mut self, max: usize) -> Vec<String> {
        let n = self.rng.gen_range(1..=max);
        (0..n).map(|_| self.line()).collect()
    }

    fn fresh_name(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        let ext = if self.rng.gen_bool(0.8) { "py" } else { "md" };
        format!("{prefix}{}.{ext}", self.next_id)
    }

    fn emit_lines(&mut self, lines: &[String]) {
        for l in lines {
            self.out.push_str("| ");
            self.out.push_str(l);
            self.out.push('\n');
        }
    }

    /// One random operation on `files`, written to the script.
    fn op(&mut self, files: &mut Files, prefix: &str, allow_structural: bool) {
        let paths: Vec<String> = files.keys().cloned().collect();
        let choice = if paths.is_empty() { 0 } else { self.rng.gen_range(0..10) };
        if choice == 0 || paths.is_empty() {
            let path = self.fresh_name(prefix);
            let lines = self.lines(6);
            self.out.push_str(&format!("insert {path} 0\n"));
            self.emit_lines(&lines);
            files.insert(path, lines);
            return;
        }
        let path = paths.choose(&mut self.rng).unwrap().clone();
        let len = files[&path].len();
        match choice {
            1..=3 => {
                let after = self.rng.gen_range(0..=len);
                let lines = self.lines(4);
                self.out.push_str(&format!("insert {path} {after}\n"));
                self.emit_lines(&lines);
                let f = files.get_mut(&path).unwrap();
                f.splice(after..after, lines);
            }
            4 | 5 if len > 0 => {
                let at = self.rng.gen_range(1..=len);
                let count = self.rng.gen_range(1..=(len - at + 1).min(3));
                self.out.push_str(&format!("delete {path} {at} {count}\n"));
                files.get_mut(&path).unwrap().drain(at - 1..at - 1 + count);
            }
            6 | 7 if len > 0 => {
                let at = self.rng.gen_range(1..=len);
                let count = self.rng.gen_range(1..=(len - at + 1).min(3));
                let old: Vec<String> = files[&path][at - 1..at - 1 + count].to_vec();
                // Sometimes a whitespace-only edit of the same lines.
                let lines = if self.rng.gen_bool(0.3) {
                    old.iter().map(|l| format!("{l}  ")).collect()
                } else {
                    self.lines(3)
                };
                self.out.push_str(&format!("replace {path} {at} {count}\n"));
                self.emit_lines(&lines);
                files.get_mut(&path).unwrap().splice(at - 1..at - 1 + count, lines);
            }
            8 if allow_structural => {
                let to = self.fresh_name("moved");
                self.out.push_str(&format!("rename {path} {to}\n"));
                let body = files.remove(&path).unwrap();
                files.insert(to, body);
            }
            9 if allow_structural && files.len() > 1 => {
                self.out.push_str(&format!("remove {path}\n"));
                files.remove(&path);
            }
            _ => {
                let lines = self.lines(2);
                self.out.push_str(&format!("insert {path} {len}\n"));
                self.emit_lines(&lines);
                files.get_mut(&path).unwrap().extend(lines);
            }
        }
    }

    fn commit(&mut self, label: usize, branch: Option<&str>, files: &mut Files, prefix: &str) {
        let author = *AUTHORS.choose(&mut self.rng).unwrap();
        self.out.push_str(&format!("[commit c{label}]\nauthor: {author}\n"));
        if self.rng.gen_bool(0.2) {
            let co = *AUTHORS[..3].choose(&mut self.rng).unwrap();
            if co != author {
                self.out.push_str(&format!("coauthor: {co}\n"));
            }
        }
        if let Some(b) = branch {
            self.out.push_str(&format!("branch: {b}\n"));
        }
        self.out.push_str(&format!("message: change {label}\n"));
        for _ in 0..self.rng.gen_range(1..=3) {
            self.op(files, prefix, branch.is_none());
        }
        self.out.push_str("[end]\n\n");
    }
}

/// A script with 4 to 14 steps on `main`, possibly with merged and unmerged
/// side branches.
pub fn random_script(seed: u64) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: format!("name random-{seed}\n\n[roster]\n{ROSTER}[end]\n\n"),
        next_id: 0,
    };
    let mut main: Files = BTreeMap::new();
    let steps = g.rng.gen_range(4..=14);
    let mut label = 0;
    let mut open: Option<(String, Files, usize)> = None;
    let mut branches = 0;
    for _ in 0..steps {
        label += 1;
        let roll = g.rng.gen_range(0..10);
        match open.take() {
            None if roll < 2 && label > 1 => {
                branches += 1;
                let name = format!("side{branches}");
                g.out.push_str(&format!("[branch {name} from main]\n\n"));
                let mut own = Files::new();
                g.commit(label, Some(&name), &mut own, &format!("{name}_"));
                open = Some((name, own, 1));
            }
            Some((name, mut own, n)) if roll < 4 => {
                g.commit(label, Some(&name), &mut own, &format!("{name}_"));
                open = Some((name, own, n + 1));
            }
            Some((name, own, _)) if roll < 7 => {
                let author = *AUTHORS[..3].choose(&mut g.rng).unwrap();
                g.out.push_str(&format!(
                    "[merge m{label}]\nfrom: {name}\ninto: main\nauthor: {author}\nmessage: Merge {name}\n[end]\n\n"
                ));
                main.extend(own);
            }
            other => {
                open = other;
                g.commit(label, None, &mut main, "file");
            }
        }
    }
    g.out
}
