use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One explicit rating from `ratings.dat`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rating {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: u64,
    pub genres: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub records: Vec<Rating>,
    /// Genre name for each genre id, in id order (ids start at 1).
    pub genre_names: Vec<String>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// The files are Latin-1; every byte maps to the code point of the same value.
fn read_latin1(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.into_iter().map(char::from).collect())
}

fn field<'a>(
    parts: &[&'a str],
    i: usize,
    path: &Path,
    line: usize,
    what: &str,
) -> Result<&'a str> {
    parts.get(i).copied().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("missing {what}"),
    })
}

fn number<T: std::str::FromStr>(s: &str, path: &Path, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid {what} `{s}`"),
    })
}

/// Parses `movies.dat` into item id -> genre ids. Genre ids are assigned in
/// order of first appearance, starting at 1.
pub fn parse_movies(path: &Path) -> Result<(HashMap<u32, Vec<u32>>, Vec<String>)> {
    let text = read_latin1(path)?;
    let mut genres: HashMap<String, u32> = HashMap::new();
    let mut names = Vec::new();
    let mut items = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = raw.split("::").collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 3 `::`-separated fields, got {}", parts.len()),
            });
        }
        let item: u32 = number(parts[0], path, line, "movie id")?;
        let ids = field(&parts, 2, path, line, "genres")?
            .split('|')
            .filter(|g| !g.is_empty())
            .map(|g| {
                *genres.entry(g.to_string()).or_insert_with(|| {
                    names.push(g.to_string());
                    names.len() as u32
                })
            })
            .collect();
        items.insert(item, ids);
    }
    Ok((items, names))
}

/// Parses `ratings.dat`; genres are left empty.
pub fn parse_ratings(path: &Path) -> Result<Vec<Rating>> {
    let text = read_latin1(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = raw.split("::").collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 4 `::`-separated fields, got {}", parts.len()),
            });
        }
        let rating: u8 = number(parts[2], path, line, "rating")?;
        if !(1..=5).contains(&rating) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("rating {rating} outside 1..5"),
            });
        }
        out.push(Rating {
            user_id: number(parts[0], path, line, "user id")?,
            item_id: number(parts[1], path, line, "movie id")?,
            rating,
            timestamp: number(parts[3], path, line, "timestamp")?,
            genres: Vec::new(),
        });
    }
    Ok(out)
}

/// Reads the canonical `ratings.dat` / `movies.dat` pair.
pub fn parse_movielens(ratings_path: &Path, movies_path: &Path) -> Result<InteractionLog> {
    let (movies, genre_names) = parse_movies(movies_path)?;
    let mut records = parse_ratings(ratings_path)?;
    for r in &mut records {
        if let Some(g) = movies.get(&r.item_id) {
            r.genres.clone_from(g);
        }
    }
    Ok(InteractionLog {
        records,
        genre_names,
    })
}
