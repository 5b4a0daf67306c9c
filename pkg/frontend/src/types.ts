export interface Verdict {
  status: 'confident' | 'abstain';
  predicted_class?: number;
  warning: boolean;
  message: string;
  variance: number;
  tau: number;
}

export interface Assessment {
  rater_id: string;
  assessed_class: number;
  seq: number;
}

export interface SlicePayload {
  subject_id: string;
  slice_index: number;
  slice_count: number;
  seq: number;
  image_url: string;
  contour: number[][][];
  shape: [number, number];
  verdict: Verdict;
  assessment: Assessment | null;
}

export interface CaseInfo {
  subject_id: string;
  slice_count: number;
  assessed_count: number;
}

export interface CurveBin {
  mean_uncertainty: number;
  accuracy: number;
  count: number;
}

export interface CalibrationInfo {
  target_accuracy: number;
  tau: number;
  coverage: number;
  achieved_accuracy: number;
  curve_bins: CurveBin[];
}

export interface AssessmentResponse {
  verdict: Verdict;
  seq: number;
}
