/** Wire types shared with the inference service, plus UI session state. */

export type LabelTypeName =
  | "CurbRamp"
  | "MissingCurbRamp"
  | "Obstacle"
  | "SurfaceProblem"
  | "MissingSidewalk";

/** One label payload, exactly the service's /v1/infer request body. */
export interface LabelPayload {
  id: string;
  label_type: LabelTypeName;
  lat: number;
  lon: number;
  severity: number | null;
  tags: string[];
  description: string | null;
  zoom: number;
  heading: number;
  pitch: number;
  way_type: string;
  user_id: string;
  city_id: string;
}

export interface InferenceResponse {
  p_correct: number;
  flagged: boolean;
  model_version: string;
  timing: { prep_ms: number; infer_ms: number };
}

export type FeedbackAction = "keep" | "delete" | "viewed_mistakes" | "viewed_examples";

export interface ModelInfo {
  version: string;
  threshold: number;
  bundle_size_bytes: number;
}

/** pending -> flagged -> (kept | deleted), or pending -> kept directly. */
export type ItemState = "pending" | "flagged" | "kept" | "deleted";

export interface SessionItem {
  label: LabelPayload;
  imageRef: string | null; // optional placeholder art for the card
  state: ItemState;
  pCorrect: number | null;
}

export interface SessionFile {
  city_id: string;
  items: Array<{ label: LabelPayload; image?: string }>;
}

/** The three dialog actions, in display order. */
export type DialogAction = "confirm-keep" | "remove" | "view-common-mistakes";

export interface InterventionDialogState {
  mistakeTitle: string;
  tip: string;
  actions: readonly [DialogAction, DialogAction, DialogAction];
  aiNoticeText: string;
}

export interface ExampleCard {
  title: string;
  caption: string;
  image?: string;
}

export type Screen = "queue" | "common-mistakes" | "correct-examples";
