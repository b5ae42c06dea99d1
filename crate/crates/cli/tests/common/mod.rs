#![allow(dead_code)]

use std::path::{Path, PathBuf};

use contribsum_core::synthfix::{build, fixture};

pub struct Course {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Course {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    pub fn run(&self, args: &[&str]) -> Output {
        let config = self.config.to_string_lossy().into_owned();
        let mut full: Vec<String> = vec!["contribsum".into(), args[0].into(), "--config".into(), config];
        full.extend(args[1..].iter().map(|s| s.to_string()));
        run(&full)
    }
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run<S: AsRef<str>>(args: &[S]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = contribsum_cli::run(args.iter().map(|a| a.as_ref().to_string()), &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// A course directory with one team per named fixture and a config using
/// the mock provider.
pub fn course(fixtures: &[&str], extra_run: &str) -> Course {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::create_dir_all(root.join("rosters")).unwrap();
    std::fs::copy(data("sprint.md"), root.join("sprint.md")).unwrap();
    std::fs::copy(data("project.md"), root.join("project.md")).unwrap();
    let mut config = format!(
        "[run]\nsprint_start = 2024-03-04\nsprint_instructions = \"sprint.md\"\nout_dir = \"out\"\nstate_dir = \"state\"\nrecordings_dir = \"recordings\"\n{extra_run}\n"
    );
    for name in fixtures {
        let f = fixture(name).unwrap_or_else(|| panic!("no fixture {name}"));
        build(&f.script, &root.join("repos").join(name)).unwrap();
        std::fs::write(root.join("rosters").join(format!("{name}.txt")), &f.script.roster_document).unwrap();
        config.push_str(&format!(
            "\n[[teams]]\nid = \"{name}\"\npath = \"repos/{name}\"\nroster = \"rosters/{name}.txt\"\nproject_description = \"project.md\"\n"
        ));
    }
    let path = root.join("course.toml");
    std::fs::write(&path, config).unwrap();
    Course { dir, config: path }
}
