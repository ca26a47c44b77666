use super::Scenario;

pub const OBJECTS_HEADER: &str = "Objects:";
pub const EVENTS_HEADER: &str = "Events:";

/// Textual digest of a scenario: one line per object, then one line per event
/// ordered by span start.
///
/// ```text
/// Objects:
/// horse_0: adult brown horse, visible frames 0–99
/// Events:
/// frames 5–8: adult brown horse moving left [event_0]
/// ```
pub fn synthesize_narrative(scenario: &Scenario) -> String {
    let mut out = String::new();
    out.push_str(OBJECTS_HEADER);
    out.push('\n');
    for o in &scenario.objects {
        out.push_str(&format!(
            "{}: {}, visible frames {}–{}\n",
            o.object_id,
            o.noun_phrase(),
            o.visible_span.start,
            o.visible_span.end
        ));
    }
    out.push_str(EVENTS_HEADER);
    out.push('\n');
    let mut events: Vec<_> = scenario.events.iter().collect();
    events.sort_by(|a, b| {
        (a.span.start, a.span.end, &a.event_id).cmp(&(b.span.start, b.span.end, &b.event_id))
    });
    for e in events {
        let subject = scenario
            .object(&e.subject_id)
            .map(|o| o.noun_phrase())
            .unwrap_or_else(|| e.subject_id.clone());
        out.push_str(&format!(
            "frames {}–{}: {} {} [{}]\n",
            e.span.start, e.span.end, subject, e.description, e.event_id
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::ReferenceType;
    use crate::scenario::{
        AudioTrack, EventSpec, FrameSpan, Keyframe, ObjectSpec, Query, Shape, VideoSpec,
        SCENARIO_SCHEMA_VERSION,
    };

    fn one_horse() -> Scenario {
        Scenario {
            schema_version: SCENARIO_SCHEMA_VERSION,
            seed: 0,
            video: VideoSpec {
                width: 32,
                height: 32,
                num_frames: 30,
                fps: 24,
            },
            objects: vec![ObjectSpec {
                object_id: "horse_0".into(),
                category: "horse".into(),
                attributes: ["brown".to_string(), "adult".to_string()].into(),
                shape: Shape::Rectangle,
                trajectory: vec![Keyframe {
                    frame: 0,
                    cx: 10.0,
                    cy: 10.0,
                    half_w: 3.0,
                    half_h: 3.0,
                }],
                visible_span: FrameSpan::new(0, 29),
            }],
            events: vec![],
            audio: AudioTrack::default(),
            queries: vec![Query {
                query_id: "q".into(),
                expression: "the horse".into(),
                uses_audio: false,
                gt_object_id: "horse_0".into(),
                gt_reference_type: ReferenceType::CategoryLevel,
            }],
        }
    }

    #[test]
    fn empty_event_section() {
        let text = synthesize_narrative(&one_horse());
        assert_eq!(
            text,
            "Objects:\nhorse_0: adult brown horse, visible frames 0–29\nEvents:\n"
        );
    }

    #[test]
    fn events_sorted_by_start() {
        let mut s = one_horse();
        s.events.push(EventSpec {
            event_id: "event_a".into(),
            subject_id: "horse_0".into(),
            description: "moving left".into(),
            span: FrameSpan::new(10, 20),
        });
        s.events.push(EventSpec {
            event_id: "event_b".into(),
            subject_id: "horse_0".into(),
            description: "jumping up".into(),
            span: FrameSpan::new(5, 8),
        });
        let text = synthesize_narrative(&s);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[3], "frames 5–8: adult brown horse jumping up [event_b]");
        assert_eq!(lines[4], "frames 10–20: adult brown horse moving left [event_a]");
        assert_eq!(text, synthesize_narrative(&s.clone()));
    }
}
