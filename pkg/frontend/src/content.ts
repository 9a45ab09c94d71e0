/** Editable content packs: labeling tips and example cards per label type.
 *
 * Tips rotate round-robin within a label type each time the dialog appears.
 * Ships with defaults; deployments can override by serving content JSON.
 */

import type { ExampleCard, LabelTypeName } from "./types";

export const AI_NOTICE =
  "This reminder is powered by AI and the system may make mistakes.";

export const MISTAKE_TITLES: Record<LabelTypeName, string> = {
  CurbRamp: "This curb ramp label looks like a mistake",
  MissingCurbRamp: "This missing-curb-ramp label looks like a mistake",
  Obstacle: "This obstacle label looks like a mistake",
  SurfaceProblem: "This surface-problem label looks like a mistake",
  MissingSidewalk: "This missing-sidewalk label looks like a mistake",
};

export const DEFAULT_TIPS: Record<LabelTypeName, string[]> = {
  CurbRamp: [
    "Do not label driveways as curb ramps.",
    "Curb ramps are usually found at intersections, not mid-block.",
    "Zoom in to confirm the ramp connects the sidewalk to the street.",
  ],
  MissingCurbRamp: [
    "Only place this label where a pedestrian crossing lacks a ramp.",
    "Check both corners: a ramp may sit just outside the view.",
    "Driveway aprons are not missing curb ramps.",
  ],
  Obstacle: [
    "Obstacles must block the sidewalk path, not just sit near it.",
    "If a wheelchair can pass around it comfortably, it is not an obstacle.",
    "Zoom in and add a tag (pole, hydrant, vegetation) when you can.",
  ],
  SurfaceProblem: [
    "Rate severity by how hard it is to cross in a wheelchair.",
    "Zoom in to confirm cracks or heaving are on the sidewalk itself.",
    "Small cosmetic cracks usually do not qualify.",
  ],
  MissingSidewalk: [
    "A missing sidewalk is a high-severity issue; low ratings are usually mistakes.",
    "Confirm there is genuinely no walkable path on this side.",
    "Do not use this label for temporary construction closures.",
  ],
};

export const DEFAULT_EXAMPLES: Record<LabelTypeName, ExampleCard[]> = {
  CurbRamp: [
    { title: "Correct: corner ramp", caption: "Ramp at an intersection corner with flared sides." },
    { title: "Correct: marked crossing", caption: "Ramp aligned with a painted crosswalk." },
    { title: "Common mistake: driveway", caption: "Driveway aprons look like ramps but are not." },
    { title: "Common mistake: mid-block", caption: "A lone mid-block cut is usually a driveway." },
  ],
  MissingCurbRamp: [
    { title: "Correct: abrupt curb", caption: "Crossing ends in a full-height curb." },
    { title: "Correct: one-sided ramp", caption: "Ramp on one corner only; the other is missing." },
    { title: "Common mistake: no crossing", caption: "No pedestrian crossing exists here at all." },
  ],
  Obstacle: [
    { title: "Correct: blocking pole", caption: "Pole in the middle of a narrow sidewalk." },
    { title: "Correct: overgrown hedge", caption: "Vegetation forces pedestrians off the path." },
    { title: "Common mistake: passable bin", caption: "Bin leaves ample room to pass." },
    { title: "Common mistake: off-path tree", caption: "Tree sits in the planting strip, not the path." },
  ],
  SurfaceProblem: [
    { title: "Correct: heaved slab", caption: "Raised slab edge forms a step in the path." },
    { title: "Correct: broken surface", caption: "Crumbled concrete across the full width." },
    { title: "Common mistake: hairline crack", caption: "Cosmetic crack with a smooth surface." },
  ],
  MissingSidewalk: [
    { title: "Correct: path ends", caption: "Sidewalk ends abruptly into grass or gravel." },
    { title: "Correct: no sidewalk side", caption: "Road shoulder only; pedestrians walk in the street." },
    { title: "Common mistake: low severity", caption: "Missing sidewalks are high-severity by definition." },
  ],
};

/** Round-robin tip rotation, one counter per label type. */
export class TipRotation {
  private counters = new Map<LabelTypeName, number>();

  constructor(private tips: Record<LabelTypeName, string[]> = DEFAULT_TIPS) {}

  next(labelType: LabelTypeName): string {
    const pool = this.tips[labelType];
    const index = this.counters.get(labelType) ?? 0;
    this.counters.set(labelType, index + 1);
    return pool[index % pool.length];
  }
}
