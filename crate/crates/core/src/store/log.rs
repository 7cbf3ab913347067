//! Append-only JSON-lines logs with gap-free sequence numbers.
//!
//! Each line is `{"seq":N,"record":{...}}`. An append is acknowledged only
//! after the line (including its newline) has been written and synced, so a
//! crash can leave at most one torn line at the tail. Opening a log drops
//! such a tail; any other malformed line is reported as corruption.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::StoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry<T> {
    pub seq: u64,
    pub record: T,
}

#[derive(Serialize)]
struct LogLineRef<'a, T> {
    seq: u64,
    record: &'a T,
}

struct Tail {
    file: File,
    next_seq: u64,
}

pub struct AppendLog<T> {
    path: PathBuf,
    tail: Mutex<Tail>,
    _record: PhantomData<fn() -> T>,
}

impl<T> std::fmt::Debug for AppendLog<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppendLog").field("path", &self.path).finish()
    }
}

impl<T: Serialize + DeserializeOwned> AppendLog<T> {
    /// Open (creating if needed) and return the full history.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<LogEntry<T>>), StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .create(true)
            .append(true)
            .open(&path)?;

        let mut entries = Vec::new();
        let mut good_len: u64 = 0;
        let mut torn = false;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            let mut lineno = 0usize;
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                let complete = line.ends_with('\n');
                match serde_json::from_str::<LogEntry<T>>(line.trim_end_matches('\n')) {
                    Ok(entry) if complete => {
                        let expected = entries.len() as u64;
                        if entry.seq != expected {
                            return Err(StoreError::Corrupt {
                                path: path.clone(),
                                line: lineno,
                                reason: format!("sequence gap: expected {expected}, found {}", entry.seq),
                            });
                        }
                        entries.push(entry);
                        good_len += n as u64;
                    }
                    _ => {
                        // Only the final line may be torn.
                        let mut rest = String::new();
                        reader.read_line(&mut rest)?;
                        if !rest.is_empty() {
                            return Err(StoreError::Corrupt {
                                path: path.clone(),
                                line: lineno,
                                reason: "malformed record".into(),
                            });
                        }
                        torn = true;
                        break;
                    }
                }
            }
        }
        if torn {
            tracing::warn!(path = %path.display(), "dropping torn tail record");
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;

        let next_seq = entries.len() as u64;
        Ok((
            Self {
                path,
                tail: Mutex::new(Tail { file, next_seq }),
                _record: PhantomData,
            },
            entries,
        ))
    }

    /// Append and sync. The returned sequence number is the acknowledgment.
    pub fn append(&self, record: &T) -> Result<u64, StoreError> {
        let mut tail = self.tail.lock().unwrap();
        let seq = tail.next_seq;
        let mut line = serde_json::to_vec(&LogLineRef { seq, record })?;
        line.push(b'\n');
        tail.file.write_all(&line)?;
        tail.file.flush()?;
        tail.file.sync_data()?;
        tail.next_seq += 1;
        Ok(seq)
    }

    /// Write only the first half of the next record, as a crash mid-write
    /// would. Used by crash-injection harnesses.
    #[doc(hidden)]
    pub fn append_torn(&self, record: &T) -> Result<(), StoreError> {
        let mut tail = self.tail.lock().unwrap();
        let seq = tail.next_seq;
        let line = serde_json::to_vec(&LogLineRef { seq, record })?;
        let half = line.len() / 2;
        tail.file.write_all(&line[..half])?;
        tail.file.sync_data()?;
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.tail.lock().unwrap().next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Rec {
        v: u32,
    }

    #[test]
    fn reopen_returns_history_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        {
            let (log, hist) = AppendLog::<Rec>::open(&path).unwrap();
            assert!(hist.is_empty());
            assert_eq!(log.append(&Rec { v: 1 }).unwrap(), 0);
            assert_eq!(log.append(&Rec { v: 2 }).unwrap(), 1);
        }
        let (log, hist) = AppendLog::<Rec>::open(&path).unwrap();
        assert_eq!(hist.len(), 2);
        assert_eq!(hist[1].record, Rec { v: 2 });
        assert_eq!(log.append(&Rec { v: 3 }).unwrap(), 2);
    }

    #[test]
    fn torn_tail_is_dropped_and_sequence_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        {
            let (log, _) = AppendLog::<Rec>::open(&path).unwrap();
            log.append(&Rec { v: 1 }).unwrap();
            log.append_torn(&Rec { v: 2 }).unwrap();
        }
        let (log, hist) = AppendLog::<Rec>::open(&path).unwrap();
        assert_eq!(hist.len(), 1);
        assert_eq!(log.append(&Rec { v: 3 }).unwrap(), 1);
        drop(log);
        let (_, hist) = AppendLog::<Rec>::open(&path).unwrap();
        assert_eq!(
            hist.iter().map(|e| e.record.v).collect::<Vec<_>>(),
            vec![1, 3]
        );
    }

    #[test]
    fn corruption_in_the_middle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(
            &path,
            "{\"seq\":0,\"record\":{\"v\":1}}\ngarbage\n{\"seq\":1,\"record\":{\"v\":2}}\n",
        )
        .unwrap();
        assert!(matches!(
            AppendLog::<Rec>::open(&path),
            Err(StoreError::Corrupt { line: 2, .. })
        ));
    }

    #[test]
    fn sequence_gap_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(
            &path,
            "{\"seq\":0,\"record\":{\"v\":1}}\n{\"seq\":2,\"record\":{\"v\":2}}\n",
        )
        .unwrap();
        assert!(AppendLog::<Rec>::open(&path).is_err());
    }
}
