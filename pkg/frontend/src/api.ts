import type {
  AssessmentResponse,
  CalibrationInfo,
  CaseInfo,
  SlicePayload,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public body: Record<string, unknown> = {},
  ) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const message =
      typeof body === 'object' && body !== null && 'error' in body
        ? String((body as Record<string, unknown>).error)
        : response.statusText;
    throw new ApiError(response.status, message, body as Record<string, unknown>);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly baseUrl: string = '') {}

  async listCases(): Promise<CaseInfo[]> {
    const body = await asJson<{ cases: CaseInfo[] }>(await fetch(`${this.baseUrl}/api/cases`));
    return body.cases;
  }

  async getSlice(caseId: string, index: number): Promise<SlicePayload> {
    return asJson(await fetch(`${this.baseUrl}/api/cases/${caseId}/slices/${index}`));
  }

  imageUrl(payload: SlicePayload): string {
    return `${this.baseUrl}${payload.image_url}`;
  }

  async postAssessment(
    caseId: string,
    index: number,
    raterId: string,
    assessedClass: number,
    expectedSeq?: number,
  ): Promise<AssessmentResponse> {
    const body: Record<string, unknown> = { rater_id: raterId, assessed_class: assessedClass };
    if (expectedSeq !== undefined) {
      body.expected_seq = expectedSeq;
    }
    const response = await fetch(`${this.baseUrl}/api/cases/${caseId}/slices/${index}/assessment`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    return asJson(response);
  }

  async getCalibration(): Promise<CalibrationInfo> {
    return asJson(await fetch(`${this.baseUrl}/api/calibration`));
  }

  async postThreshold(targetAccuracy: number): Promise<CalibrationInfo> {
    const response = await fetch(`${this.baseUrl}/api/threshold`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ target_accuracy: targetAccuracy }),
    });
    return asJson(response);
  }
}
