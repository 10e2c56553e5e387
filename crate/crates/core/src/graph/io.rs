//! `edges.tsv` / `users.tsv` cascade directories.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{CascadeGraph, Edge, UserRecord};
use crate::error::{MmenError, Result};

pub const EDGES_FILE: &str = "edges.tsv";
pub const USERS_FILE: &str = "users.tsv";

const USER_HEADER: [&str; 8] = [
    "id",
    "name",
    "description",
    "followers",
    "friends",
    "statuses",
    "verified",
    "geo_enabled",
];

/// Reads a cascade directory. Node ids are densified in order of first
/// appearance in `edges.tsv`.
pub fn load_cascade(dir: impl AsRef<Path>) -> Result<CascadeGraph> {
    let dir = dir.as_ref();
    let edges_path = dir.join(EDGES_FILE);
    let text = fs::read_to_string(&edges_path).map_err(|e| MmenError::io(&edges_path, e))?;

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut intern = |id: &str| -> usize {
        if let Some(&i) = index.get(id) {
            return i;
        }
        labels.push(id.to_string());
        index.insert(id.to_string(), labels.len() - 1);
        labels.len() - 1
    };

    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| MmenError::Parse {
            path: edges_path.clone(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) || fields[..2].iter().any(|f| f.is_empty()) {
            return Err(parse_err(format!(
                "expected `src<TAB>dst<TAB>delay_s`, got {line:?}"
            )));
        }
        let delay_s = match fields.get(2) {
            None | Some(&"") => None,
            Some(s) => {
                let d: f64 = s
                    .parse()
                    .map_err(|_| parse_err(format!("bad delay {s:?}")))?;
                if !d.is_finite() || d < 0.0 {
                    return Err(parse_err(format!("delay must be finite and >= 0, got {s}")));
                }
                Some(d)
            }
        };
        let src = intern(fields[0]);
        let dst = intern(fields[1]);
        edges.push(Edge { src, dst, delay_s });
    }
    if edges.is_empty() {
        return Err(MmenError::Data(format!(
            "{}: no edges",
            edges_path.display()
        )));
    }

    let n = labels.len();
    let users_path = dir.join(USERS_FILE);
    let users = if users_path.exists() {
        Some(read_users(&users_path, &index, n)?)
    } else {
        None
    };
    CascadeGraph::build(n, edges, users, Some(labels))
}

fn read_users(
    path: &Path,
    index: &HashMap<String, usize>,
    n: usize,
) -> Result<Vec<UserRecord>> {
    let text = fs::read_to_string(path).map_err(|e| MmenError::io(path, e))?;
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());

    let parse_err = |line: usize, msg: String| MmenError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != USER_HEADER {
        return Err(parse_err(
            1,
            format!("expected header {:?}, got {:?}", USER_HEADER, cols),
        ));
    }

    let mut users = vec![UserRecord::default(); n];
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        let cell = |k: usize| -> Option<&str> {
            let s = row.get(k).unwrap_or("");
            (!s.is_empty()).then_some(s)
        };
        let id = cell(0).ok_or_else(|| parse_err(line, "missing id".into()))?;
        let &v = index
            .get(id)
            .ok_or_else(|| parse_err(line, format!("user {id:?} does not appear in the edge list")))?;
        let count = |k: usize| -> Result<Option<u64>> {
            cell(k)
                .map(|s| {
                    s.parse::<u64>()
                        .map_err(|_| parse_err(line, format!("column {} is not a count: {s:?}", USER_HEADER[k])))
                })
                .transpose()
        };
        let flag = |k: usize| -> Result<Option<bool>> {
            cell(k)
                .map(|s| match s.to_ascii_lowercase().as_str() {
                    "1" | "true" => Ok(true),
                    "0" | "false" => Ok(false),
                    _ => Err(parse_err(line, format!("column {} is not a bool: {s:?}", USER_HEADER[k]))),
                })
                .transpose()
        };
        users[v] = UserRecord {
            name: cell(1).map(str::to_string),
            description: cell(2).map(str::to_string),
            followers_count: count(3)?,
            friends_count: count(4)?,
            statuses_count: count(5)?,
            verified: flag(6)?,
            geo_enabled: flag(7)?,
            retweet_delay_s: None,
        };
    }
    Ok(users)
}

/// Writes `edges.tsv` and `users.tsv` into `dir`, creating it if needed.
pub fn save_cascade(g: &CascadeGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| MmenError::io(dir, e))?;

    let edges_path = dir.join(EDGES_FILE);
    let mut out = String::with_capacity(g.num_edges() * 16);
    for e in g.edges() {
        out.push_str(g.label(e.src));
        out.push('\t');
        out.push_str(g.label(e.dst));
        out.push('\t');
        if let Some(d) = e.delay_s {
            out.push_str(&d.to_string());
        }
        out.push('\n');
    }
    fs::write(&edges_path, out).map_err(|e| MmenError::io(&edges_path, e))?;

    let users_path = dir.join(USERS_FILE);
    let to_io = |e: csv::Error| MmenError::io(&users_path, e.into());
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_writer(Vec::new());
    writer.write_record(USER_HEADER).map_err(to_io)?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    for (v, u) in g.users().iter().enumerate() {
        if u.profile_is_empty() {
            continue;
        }
        writer
            .write_record([
                g.label(v).to_string(),
                opt(u.name.clone()),
                opt(u.description.clone()),
                opt(u.followers_count.map(|x| x.to_string())),
                opt(u.friends_count.map(|x| x.to_string())),
                opt(u.statuses_count.map(|x| x.to_string())),
                opt(u.verified.map(|x| x.to_string())),
                opt(u.geo_enabled.map(|x| x.to_string())),
            ])
            .map_err(to_io)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| MmenError::io(&users_path, e.into_error()))?;
    let mut f = fs::File::create(&users_path).map_err(|e| MmenError::io(&users_path, e))?;
    f.write_all(&bytes).map_err(|e| MmenError::io(&users_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn star_with_comments() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), EDGES_FILE, "# root\n0\t1\t5\n0\t2\t7.5\n\n");
        let g = load_cascade(tmp.path()).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges(), g.source()), (3, 2, 0));
        assert_eq!(g.user(2).retweet_delay_s, Some(7.5));
    }

    #[test]
    fn duplicate_edges_collapse() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), EDGES_FILE, "0\t1\t1\n0\t1\t1\n");
        assert_eq!(load_cascade(tmp.path()).unwrap().num_edges(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), EDGES_FILE, "0\t1\t1\n0 2\n");
        match load_cascade(tmp.path()) {
            Err(MmenError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        write(tmp.path(), EDGES_FILE, "0\t1\tsoon\n");
        assert!(matches!(load_cascade(tmp.path()), Err(MmenError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_edge_file_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), EDGES_FILE, "# nothing\n");
        assert!(matches!(load_cascade(tmp.path()), Err(MmenError::Data(_))));
    }

    #[test]
    fn dangling_user_row_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), EDGES_FILE, "a\tb\t1\n");
        write(
            tmp.path(),
            USERS_FILE,
            "id\tname\tdescription\tfollowers\tfriends\tstatuses\tverified\tgeo_enabled\nzz\tx\t\t1\t\t\t\t\n",
        );
        assert!(matches!(load_cascade(tmp.path()), Err(MmenError::Parse { line: 2, .. })));
    }

    #[test]
    fn comma_header_and_absent_cells() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), EDGES_FILE, "a\tb\t1\n");
        write(
            tmp.path(),
            USERS_FILE,
            "id,name,description,followers,friends,statuses,verified,geo_enabled\nb,ab,,10,,,true,\n",
        );
        let g = load_cascade(tmp.path()).unwrap();
        let u = g.user(1);
        assert_eq!(u.name.as_deref(), Some("ab"));
        assert_eq!(u.description, None);
        assert_eq!(u.followers_count, Some(10));
        assert_eq!(u.friends_count, None);
        assert_eq!(u.verified, Some(true));
        assert_eq!(u.geo_enabled, None);
        assert!(g.user(0).profile_is_empty());
    }
}
