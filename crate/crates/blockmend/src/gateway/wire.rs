//! Rendering a prompt bundle into the two supported wire styles.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{Attachment, PromptBundle, RequestStyle};
use crate::vm::snapshot::decode_ppm;

#[derive(Debug, Clone, PartialEq)]
pub struct WireImage {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

/// A request body plus the decomposed parts it was rendered from, kept so
/// transports can re-render (e.g. after image re-encoding) and audits can
/// count what actually went out.
#[derive(Debug, Clone, PartialEq)]
pub struct WirePayload {
    pub style: RequestStyle,
    pub body: Value,
    pub texts: Vec<String>,
    pub images: Vec<WireImage>,
    pub schema: Value,
    pub images_available: usize,
}

/// Renders the bundle in the requested style. Both styles carry the same
/// texts, the same image bytes (base64), and the same response schema.
pub fn assemble_request(bundle: &PromptBundle, style: RequestStyle) -> WirePayload {
    let texts = vec![bundle.system_text.clone(), bundle.user_text.clone()];
    let images: Vec<WireImage> = bundle
        .attachments
        .iter()
        .map(|a| WireImage { media_type: a.media_type.clone(), bytes: a.bytes.clone() })
        .collect();
    let body = render_body(style, &texts, &images, &bundle.response_schema);
    WirePayload {
        style,
        body,
        texts,
        images,
        schema: bundle.response_schema.clone(),
        images_available: bundle.images_available,
    }
}

fn render_body(style: RequestStyle, texts: &[String], images: &[WireImage], schema: &Value) -> Value {
    match style {
        RequestStyle::ResponsesStyle => {
            let mut input = vec![json!({"type": "input_text", "text": texts[1]})];
            for img in images {
                input.push(json!({
                    "type": "input_image",
                    "media_type": img.media_type,
                    "image_base64": BASE64.encode(&img.bytes),
                }));
            }
            json!({
                "instructions": texts[0],
                "input": input,
                "response_schema": schema,
            })
        }
        RequestStyle::ChatStyle => {
            let mut content = vec![json!({"type": "text", "text": texts[1]})];
            for img in images {
                content.push(json!({
                    "type": "image_url",
                    "image_url": {
                        "url": format!("data:{};base64,{}", img.media_type, BASE64.encode(&img.bytes))
                    }
                }));
            }
            json!({
                "messages": [
                    {"role": "system", "content": texts[0]},
                    {"role": "user", "content": content}
                ],
                "response_format": {"type": "json_schema", "json_schema": schema},
            })
        }
    }
}

/// Decodes a body back into (texts, image bytes) for style-equivalence
/// checks and fixture inspection.
pub fn extract_parts(body: &Value) -> (Vec<String>, Vec<Vec<u8>>) {
    let mut texts = Vec::new();
    let mut images = Vec::new();
    if let Some(instructions) = body.get("instructions").and_then(Value::as_str) {
        texts.push(instructions.to_string());
        for record in body.get("input").and_then(Value::as_array).into_iter().flatten() {
            match record.get("type").and_then(Value::as_str) {
                Some("input_text") => {
                    if let Some(t) = record.get("text").and_then(Value::as_str) {
                        texts.push(t.to_string());
                    }
                }
                Some("input_image") => {
                    if let Some(b64) = record.get("image_base64").and_then(Value::as_str) {
                        if let Ok(bytes) = BASE64.decode(b64) {
                            images.push(bytes);
                        }
                    }
                }
                _ => {}
            }
        }
        return (texts, images);
    }
    for message in body.get("messages").and_then(Value::as_array).into_iter().flatten() {
        match message.get("content") {
            Some(Value::String(s)) => texts.push(s.clone()),
            Some(Value::Array(parts)) => {
                for part in parts {
                    match part.get("type").and_then(Value::as_str) {
                        Some("text") => {
                            if let Some(t) = part.get("text").and_then(Value::as_str) {
                                texts.push(t.to_string());
                            }
                        }
                        Some("image_url") => {
                            let url = part
                                .get("image_url")
                                .and_then(|u| u.get("url"))
                                .and_then(Value::as_str)
                                .unwrap_or("");
                            if let Some((_, b64)) = url.split_once(";base64,") {
                                if let Ok(bytes) = BASE64.decode(b64) {
                                    images.push(bytes);
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }
            _ => {}
        }
    }
    (texts, images)
}

/// Re-renders a payload with every PPM image transcoded to lossless PNG;
/// non-PPM attachments pass through unchanged.
pub fn with_png_images(payload: &WirePayload, style: RequestStyle) -> WirePayload {
    let images: Vec<WireImage> = payload
        .images
        .iter()
        .map(|img| {
            if img.media_type == "image/x-portable-pixmap" {
                if let Some((w, h, pixels)) = decode_ppm(&img.bytes) {
                    return WireImage { media_type: "image/png".into(), bytes: encode_png(w, h, &pixels) };
                }
            }
            img.clone()
        })
        .collect();
    let body = render_body(style, &payload.texts, &images, &payload.schema);
    WirePayload {
        style,
        body,
        texts: payload.texts.clone(),
        images,
        schema: payload.schema.clone(),
        images_available: payload.images_available,
    }
}

pub fn encode_png(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("png header");
        writer.write_image_data(rgb).expect("png body");
    }
    out
}

/// Wraps an archive asset as an attachment when its extension names an
/// image format; everything else is ignored.
pub fn attachment_from_asset(name: &str, bytes: &[u8]) -> Option<Attachment> {
    let ext = name.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase())?;
    let media_type = match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "bmp" => "image/bmp",
        "svg" => "image/svg+xml",
        "ppm" => "image/x-portable-pixmap",
        _ => return None,
    };
    Some(Attachment {
        bytes: bytes.to_vec(),
        media_type: media_type.to_string(),
        width: 0,
        height: 0,
        origin: super::AttachmentOrigin::ProjectAsset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::AttachmentOrigin;

    fn bundle(images: usize) -> PromptBundle {
        PromptBundle {
            system_text: "be precise".into(),
            user_text: "fix the project".into(),
            response_schema: json!({"type": "array", "maxItems": 3}),
            attachments: (0..images)
                .map(|i| Attachment {
                    bytes: vec![i as u8; 10 + i],
                    media_type: "image/x-portable-pixmap".into(),
                    width: 1,
                    height: 1,
                    origin: AttachmentOrigin::ProbeSnapshot,
                })
                .collect(),
            images_available: images,
        }
    }

    #[test]
    fn text_only_bundle_has_no_image_records() {
        for style in [RequestStyle::ResponsesStyle, RequestStyle::ChatStyle] {
            let payload = assemble_request(&bundle(0), style);
            let (_, images) = extract_parts(&payload.body);
            assert!(images.is_empty());
        }
    }

    #[test]
    fn responses_style_round_trips_image_bytes() {
        let b = bundle(1);
        let payload = assemble_request(&b, RequestStyle::ResponsesStyle);
        let records = payload.body["input"].as_array().unwrap();
        let image_records: Vec<_> =
            records.iter().filter(|r| r["type"] == "input_image").collect();
        assert_eq!(image_records.len(), 1);
        let decoded = BASE64.decode(image_records[0]["image_base64"].as_str().unwrap()).unwrap();
        assert_eq!(decoded, b.attachments[0].bytes);
    }

    #[test]
    fn styles_carry_equal_content() {
        let b = bundle(2);
        let a = assemble_request(&b, RequestStyle::ResponsesStyle);
        let c = assemble_request(&b, RequestStyle::ChatStyle);
        let (texts_a, images_a) = extract_parts(&a.body);
        let (texts_c, images_c) = extract_parts(&c.body);
        assert_eq!(texts_a, texts_c);
        assert_eq!(images_a, images_c);
        assert_eq!(images_a.len(), 2);
    }

    #[test]
    fn png_transcoding_swaps_media_type() {
        let state = crate::vm::interp::VmState {
            tick: 0,
            sprites: Default::default(),
            variables: Default::default(),
            pending_broadcasts: vec![],
            rng_state: 0,
        };
        let snap = crate::vm::snapshot::capture_snapshot(&state);
        let b = PromptBundle {
            system_text: "s".into(),
            user_text: "u".into(),
            response_schema: json!({}),
            attachments: vec![Attachment {
                bytes: snap.encoded.clone(),
                media_type: "image/x-portable-pixmap".into(),
                width: snap.width,
                height: snap.height,
                origin: AttachmentOrigin::ProbeSnapshot,
            }],
            images_available: 1,
        };
        let payload = assemble_request(&b, RequestStyle::ChatStyle);
        let png_payload = with_png_images(&payload, RequestStyle::ChatStyle);
        assert_eq!(png_payload.images[0].media_type, "image/png");
        assert_ne!(png_payload.images[0].bytes, payload.images[0].bytes);
        assert!(png_payload.images[0].bytes.starts_with(&[0x89, b'P', b'N', b'G']));
    }

    #[test]
    fn asset_media_types() {
        assert_eq!(attachment_from_asset("cat.png", b"x").unwrap().media_type, "image/png");
        assert!(attachment_from_asset("sound.wav", b"x").is_none());
        assert!(attachment_from_asset("noext", b"x").is_none());
    }
}
