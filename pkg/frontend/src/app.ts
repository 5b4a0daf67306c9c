import { ApiClient, ApiError } from './api.js';
import { ReviewViewState } from './state.js';
import type { CaseInfo, SlicePayload } from './types.js';

const CLASS_NAMES = ['0 - Not acceptable', '1 - Major revision', '2 - No/minor revision'];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = '',
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

export class ReviewApp {
  readonly state = new ReviewViewState();
  private cases: CaseInfo[] = [];

  private caseSelect!: HTMLSelectElement;
  private progress!: HTMLElement;
  private sliceMeta!: HTMLElement;
  private image!: HTMLImageElement;
  private overlay!: SVGSVGElement;
  private overlayToggle!: HTMLInputElement;
  private prevButton!: HTMLButtonElement;
  private nextButton!: HTMLButtonElement;
  private caution!: HTMLElement;
  private verdictChip!: HTMLElement;
  private assessButtons: HTMLButtonElement[] = [];
  private banner!: HTMLElement;
  private bannerMessage!: HTMLElement;
  private confirmButton!: HTMLButtonElement;
  private reviseButton!: HTMLButtonElement;
  private retryBox!: HTMLElement;
  private retryButton!: HTMLButtonElement;
  private reviewPage!: HTMLElement;
  private calibrationPage!: HTMLElement;
  private calibrationBody!: HTMLElement;
  private targetInput!: HTMLInputElement;
  private applyTarget!: HTMLButtonElement;
  private calibrationStatus!: HTMLElement;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private raterId: string = 'reviewer',
  ) {}

  async start(): Promise<void> {
    this.buildDom();
    this.cases = await this.api.listCases();
    for (const caseInfo of this.cases) {
      this.caseSelect.append(
        el('option', { value: caseInfo.subject_id }, caseInfo.subject_id),
      );
    }
    if (this.cases.length > 0) {
      await this.loadSlice(this.cases[0].subject_id, 0);
    }
  }

  private buildDom(): void {
    this.root.innerHTML = '';
    const header = el('header');
    const nav = el('nav');
    const reviewTab = el('button', { id: 'tab-review', class: 'tab active' }, 'Review');
    const calibrationTab = el('button', { id: 'tab-calibration', class: 'tab' }, 'Calibration');
    nav.append(reviewTab, calibrationTab);
    this.caseSelect = el('select', { id: 'case-select' });
    this.progress = el('span', { id: 'progress' });
    header.append(nav, this.caseSelect, this.progress);

    this.reviewPage = el('section', { id: 'review-page' });
    const viewer = el('div', { id: 'viewer' });
    this.image = el('img', { id: 'slice-image', alt: 'CT slice' });
    this.overlay = document.createElementNS('http://www.w3.org/2000/svg', 'svg');
    this.overlay.id = 'contour-overlay';
    viewer.append(this.image, this.overlay);
    this.sliceMeta = el('div', { id: 'slice-meta' });

    const controls = el('div', { id: 'controls' });
    this.prevButton = el('button', { id: 'prev-slice' }, 'Previous');
    this.nextButton = el('button', { id: 'next-slice' }, 'Next');
    const toggleLabel = el('label', { id: 'overlay-label' }, 'Contour overlay');
    this.overlayToggle = el('input', { type: 'checkbox', id: 'overlay-toggle' });
    this.overlayToggle.checked = true;
    toggleLabel.prepend(this.overlayToggle);
    controls.append(this.prevButton, this.nextButton, toggleLabel);

    this.caution = el('div', { id: 'caution-notice', class: 'notice', hidden: '' });
    this.verdictChip = el('div', { id: 'verdict-chip', class: 'chip', hidden: '' });

    const assessment = el('div', { id: 'assessment' });
    assessment.append(el('span', {}, 'Your assessment:'));
    for (let cls = 0; cls < 3; cls += 1) {
      const button = el(
        'button',
        { id: `assess-${cls}`, class: 'assess', 'data-class': String(cls) },
        CLASS_NAMES[cls],
      );
      button.disabled = true;
      this.assessButtons.push(button);
      assessment.append(button);
    }

    this.banner = el('div', { id: 'warning-banner', class: 'banner', hidden: '' });
    this.bannerMessage = el('p', { id: 'warning-message' });
    this.confirmButton = el('button', { id: 'confirm-assessment' }, 'Dismiss and confirm');
    this.reviseButton = el('button', { id: 'revise-assessment' }, 'Revise my assessment');
    this.banner.append(this.bannerMessage, this.confirmButton, this.reviseButton);

    this.retryBox = el('div', { id: 'load-error', class: 'notice', hidden: '' });
    this.retryButton = el('button', { id: 'retry-load' }, 'Retry');
    this.retryBox.append(el('span', { id: 'load-error-message' }), this.retryButton);

    this.reviewPage.append(
      this.sliceMeta,
      viewer,
      controls,
      this.caution,
      this.verdictChip,
      assessment,
      this.banner,
      this.retryBox,
    );

    this.calibrationPage = el('section', { id: 'calibration-page', hidden: '' });
    this.calibrationBody = el('div', { id: 'calibration-body' });
    const targetRow = el('div', { id: 'target-row' });
    this.targetInput = el('input', {
      id: 'target-accuracy',
      type: 'number',
      step: '0.01',
      min: '0.01',
      max: '1',
    });
    this.applyTarget = el('button', { id: 'apply-target' }, 'Recalibrate');
    this.calibrationStatus = el('span', { id: 'calibration-status' });
    targetRow.append(
      el('label', { for: 'target-accuracy' }, 'Target accuracy'),
      this.targetInput,
      this.applyTarget,
      this.calibrationStatus,
    );
    this.calibrationPage.append(targetRow, this.calibrationBody);

    this.root.append(header, this.reviewPage, this.calibrationPage);

    reviewTab.addEventListener('click', () => this.showPage('review'));
    calibrationTab.addEventListener('click', () => {
      this.showPage('calibration');
      void this.refreshCalibration();
    });
    this.caseSelect.addEventListener('change', () => {
      void this.loadSlice(this.caseSelect.value, 0);
    });
    this.prevButton.addEventListener('click', () => void this.step(-1));
    this.nextButton.addEventListener('click', () => void this.step(1));
    this.overlayToggle.addEventListener('change', () => {
      this.state.overlayOn = this.overlayToggle.checked;
      this.render();
    });
    for (const button of this.assessButtons) {
      button.addEventListener('click', () => {
        void this.submit(Number(button.dataset.class));
      });
    }
    this.confirmButton.addEventListener('click', () => void this.confirm());
    this.reviseButton.addEventListener('click', () => {
      this.state.beginRevision();
      this.render();
    });
    this.retryButton.addEventListener('click', () => {
      if (this.state.caseId !== null) {
        void this.loadSlice(this.state.caseId, this.state.sliceIndex);
      }
    });
    this.applyTarget.addEventListener('click', () => void this.applyThreshold());
  }

  private showPage(page: 'review' | 'calibration'): void {
    this.reviewPage.hidden = page !== 'review';
    this.calibrationPage.hidden = page !== 'calibration';
    this.root.querySelector('#tab-review')?.classList.toggle('active', page === 'review');
    this.root.querySelector('#tab-calibration')?.classList.toggle('active', page === 'calibration');
  }

  async loadSlice(caseId: string, index: number): Promise<void> {
    this.state.beginLoad(caseId, index);
    this.render();
    try {
      const payload = await this.api.getSlice(caseId, index);
      this.state.loadSucceeded(payload);
    } catch (error) {
      this.state.loadFailed(error instanceof Error ? error.message : String(error));
    }
    this.render();
  }

  private async step(delta: number): Promise<void> {
    if (!this.state.canAdvance || this.state.caseId === null) {
      return;
    }
    const next = this.state.sliceIndex + delta;
    if (next < 0 || next >= this.state.sliceCount) {
      return;
    }
    await this.loadSlice(this.state.caseId, next);
  }

  private async submit(assessedClass: number): Promise<void> {
    const { caseId, sliceIndex } = this.state;
    if (caseId === null || !this.state.assessmentEnabled) {
      return;
    }
    try {
      const response = await this.api.postAssessment(
        caseId,
        sliceIndex,
        this.raterId,
        assessedClass,
        this.state.lastSeq,
      );
      this.state.recordSubmission(assessedClass, response.verdict, response.seq);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // someone else updated this slice; reload and let the reviewer re-enter
        await this.loadSlice(caseId, sliceIndex);
        return;
      }
      this.state.loadFailed(error instanceof Error ? error.message : String(error));
    }
    this.render();
  }

  /** Stand by the contradicted assessment: one confirming re-submission. */
  private async confirm(): Promise<void> {
    const { caseId, sliceIndex, submittedClass } = this.state;
    if (caseId === null || submittedClass === null) {
      return;
    }
    try {
      const response = await this.api.postAssessment(
        caseId,
        sliceIndex,
        this.raterId,
        submittedClass,
        this.state.lastSeq,
      );
      this.state.recordConfirmation(response.verdict, response.seq);
    } catch (error) {
      this.state.loadFailed(error instanceof Error ? error.message : String(error));
    }
    this.render();
  }

  private async refreshCalibration(): Promise<void> {
    const info = await this.api.getCalibration();
    this.targetInput.value = String(info.target_accuracy);
    const rows = info.curve_bins
      .map(
        (bin) =>
          `<tr><td>${bin.mean_uncertainty.toFixed(4)}</td>` +
          `<td>${(bin.accuracy * 100).toFixed(1)}%</td><td>${bin.count}</td></tr>`,
      )
      .join('');
    this.calibrationBody.innerHTML =
      `<p id="calibration-summary">tau = ${info.tau.toFixed(4)}, ` +
      `coverage ${(info.coverage * 100).toFixed(1)}%, ` +
      `achieved ${(info.achieved_accuracy * 100).toFixed(1)}%</p>` +
      '<table><thead><tr><th>Mean uncertainty</th><th>Accuracy</th><th>Count</th></tr></thead>' +
      `<tbody>${rows}</tbody></table>`;
  }

  private async applyThreshold(): Promise<void> {
    const target = Number(this.targetInput.value);
    try {
      await this.api.postThreshold(target);
      this.calibrationStatus.textContent = 'threshold updated';
    } catch (error) {
      this.calibrationStatus.textContent =
        error instanceof ApiError && typeof error.body.message === 'string'
          ? String(error.body.message)
          : 'recalibration failed';
    }
    await this.refreshCalibration();
  }

  private renderOverlay(payload: SlicePayload): void {
    const [rows, cols] = payload.shape;
    this.overlay.setAttribute('viewBox', `0 0 ${cols} ${rows}`);
    this.overlay.innerHTML = '';
    if (!this.state.overlayOn) {
      return;
    }
    for (const loop of payload.contour) {
      const polyline = document.createElementNS('http://www.w3.org/2000/svg', 'polyline');
      // loop vertices are (row, col) pixel-corner coords; svg x is the column
      const points = loop.map(([r, c]) => `${c + 0.5},${r + 0.5}`).join(' ');
      polyline.setAttribute('points', points);
      polyline.setAttribute('class', 'contour');
      this.overlay.append(polyline);
    }
  }

  render(): void {
    const { state } = this;
    const payload = state.payload;
    this.retryBox.hidden = state.loadError === null;
    if (state.loadError !== null) {
      const message = this.retryBox.querySelector('#load-error-message');
      if (message) {
        message.textContent = `Failed to load slice: ${state.loadError}`;
      }
    }
    this.sliceMeta.textContent = payload
      ? `${payload.subject_id} - slice ${payload.slice_index + 1} of ${payload.slice_count}`
      : '';
    if (payload) {
      this.image.src = this.api.imageUrl(payload);
      this.renderOverlay(payload);
    } else {
      this.image.removeAttribute('src');
      this.overlay.innerHTML = '';
    }
    const caseInfo = this.cases.find((c) => c.subject_id === state.caseId);
    this.progress.textContent = caseInfo
      ? `${caseInfo.assessed_count}/${caseInfo.slice_count} assessed`
      : '';

    this.caution.hidden = state.cautionMessage === null;
    this.caution.textContent = state.cautionMessage ?? '';

    const revealed = state.revealedClass;
    this.verdictChip.hidden = !state.verdictRevealed;
    if (state.verdictRevealed) {
      this.verdictChip.textContent =
        revealed === null
          ? 'Model abstained (high uncertainty)'
          : `Model: ${CLASS_NAMES[revealed]}`;
    }

    for (const button of this.assessButtons) {
      button.disabled = !state.assessmentEnabled;
    }
    this.banner.hidden = !state.bannerOpen;
    if (state.bannerOpen && state.lastVerdict) {
      this.bannerMessage.textContent = state.lastVerdict.message;
    }
    this.prevButton.disabled = !state.canAdvance || state.sliceIndex === 0;
    this.nextButton.disabled = !state.canAdvance || state.sliceIndex >= state.sliceCount - 1;
  }
}

export async function createApp(
  root: HTMLElement,
  api: ApiClient,
  raterId = 'reviewer',
): Promise<ReviewApp> {
  const app = new ReviewApp(root, api, raterId);
  await app.start();
  return app;
}
