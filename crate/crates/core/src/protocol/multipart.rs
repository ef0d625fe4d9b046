//! multipart/form-data bodies for publish requests. The server side of the
//! mock uses [`decode`] so both ends share one implementation.

use md5::{Digest, Md5};

use super::DecodeError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    pub name: String,
    pub filename: Option<String>,
    pub content_type: String,
    pub data: Vec<u8>,
}

impl Part {
    pub fn xml(name: &str, data: impl Into<Vec<u8>>) -> Part {
        Part {
            name: name.to_string(),
            filename: Some(format!("{name}.xml")),
            content_type: "text/xml".into(),
            data: data.into(),
        }
    }

    pub fn arff(name: &str, data: impl Into<Vec<u8>>) -> Part {
        Part {
            name: name.to_string(),
            filename: Some(format!("{name}.arff")),
            content_type: "text/plain".into(),
            data: data.into(),
        }
    }
}

/// Encoded body plus the matching Content-Type header value.
#[derive(Debug, Clone)]
pub struct Body {
    pub content_type: String,
    pub bytes: Vec<u8>,
}

/// Encodes `parts`. The boundary is derived from the content, so equal
/// inputs give byte-identical bodies.
pub fn encode(parts: &[Part]) -> Body {
    let mut h = Md5::new();
    for p in parts {
        h.update(p.name.as_bytes());
        h.update(&p.data);
    }
    let boundary = format!("omlclient-{}", hex::encode(h.finalize()));
    let mut bytes = Vec::new();
    for p in parts {
        bytes.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        let disposition = match &p.filename {
            Some(f) => format!("Content-Disposition: form-data; name=\"{}\"; filename=\"{f}\"\r\n", p.name),
            None => format!("Content-Disposition: form-data; name=\"{}\"\r\n", p.name),
        };
        bytes.extend_from_slice(disposition.as_bytes());
        bytes.extend_from_slice(format!("Content-Type: {}\r\n\r\n", p.content_type).as_bytes());
        bytes.extend_from_slice(&p.data);
        bytes.extend_from_slice(b"\r\n");
    }
    bytes.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Body {
        content_type: format!("multipart/form-data; boundary={boundary}"),
        bytes,
    }
}

fn find(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from > haystack.len() {
        return None;
    }
    haystack[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

fn header_param(line: &str, key: &str) -> Option<String> {
    let pat = format!("{key}=");
    line.split(';').map(str::trim).find_map(|kv| {
        kv.strip_prefix(&pat)
            .map(|v| v.trim_matches('"').to_string())
    })
}

/// Decodes a body given its Content-Type header value.
pub fn decode(content_type: &str, body: &[u8]) -> Result<Vec<Part>, DecodeError> {
    if !content_type.trim_start().starts_with("multipart/form-data") {
        return Err(DecodeError::new(format!("not a multipart body: {content_type}")));
    }
    let boundary = header_param(content_type, "boundary")
        .ok_or_else(|| DecodeError::new("multipart content type lacks a boundary"))?;
    let delim = format!("--{boundary}").into_bytes();
    let mut pos = find(body, &delim, 0).ok_or_else(|| DecodeError::new("multipart boundary not found"))?;
    let mut parts = Vec::new();
    loop {
        pos += delim.len();
        if body[pos..].starts_with(b"--") {
            return Ok(parts);
        }
        if !body[pos..].starts_with(b"\r\n") {
            return Err(DecodeError::new("malformed multipart delimiter"));
        }
        pos += 2;
        let header_end =
            find(body, b"\r\n\r\n", pos).ok_or_else(|| DecodeError::new("multipart part lacks headers"))?;
        let headers = std::str::from_utf8(&body[pos..header_end])
            .map_err(|_| DecodeError::new("multipart headers are not UTF-8"))?;
        let mut name = None;
        let mut filename = None;
        let mut part_type = "text/plain".to_string();
        for line in headers.split("\r\n") {
            let Some((k, v)) = line.split_once(':') else { continue };
            match k.trim().to_ascii_lowercase().as_str() {
                "content-disposition" => {
                    name = header_param(v, "name");
                    filename = header_param(v, "filename");
                }
                "content-type" => part_type = v.trim().to_string(),
                _ => {}
            }
        }
        let data_start = header_end + 4;
        let mut next_delim = b"\r\n".to_vec();
        next_delim.extend_from_slice(&delim);
        let data_end =
            find(body, &next_delim, data_start).ok_or_else(|| DecodeError::new("unterminated multipart part"))?;
        parts.push(Part {
            name: name.ok_or_else(|| DecodeError::new("multipart part lacks a name"))?,
            filename,
            content_type: part_type,
            data: body[data_start..data_end].to_vec(),
        });
        pos = data_end + 2;
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn deterministic_boundary() {
        let parts = vec![Part::xml("description", "<a/>"), Part::arff("predictions", "@RELATION x\n")];
        let a = encode(&parts);
        let b = encode(&parts);
        assert_eq!(a.bytes, b.bytes);
        assert_eq!(decode(&a.content_type, &a.bytes).unwrap(), parts);
    }

    proptest! {
        #[test]
        fn roundtrip(data in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..200), 1..4)) {
            let parts: Vec<Part> = data.into_iter().enumerate()
                .map(|(i, d)| Part::arff(&format!("p{i}"), d)).collect();
            let body = encode(&parts);
            prop_assert_eq!(decode(&body.content_type, &body.bytes).unwrap(), parts);
        }
    }
}
