/**
 * DOM rendering for the curation gallery: paginated thumbnail grid with a
 * pinned reference image, a live quota meter, keyboard navigation and the
 * stage-promotion button.
 */

import { CurationApi } from './api.js';
import { GalleryStore, GalleryState } from './store.js';

export class GalleryView {
  private focusIndex = 0;

  constructor(
    private root: HTMLElement,
    private store: GalleryStore,
    private api: CurationApi,
  ) {
    this.store.subscribe((state) => this.render(state));
    this.root.addEventListener('keydown', (ev) => this.onKey(ev as KeyboardEvent));
    this.root.tabIndex = 0;
  }

  private onKey(ev: KeyboardEvent): void {
    const state = this.store.getState();
    const cols = 5;
    const moves: Record<string, number> = {
      ArrowRight: 1,
      ArrowLeft: -1,
      ArrowDown: cols,
      ArrowUp: -cols,
    };
    if (ev.key in moves) {
      this.focusIndex = Math.min(
        Math.max(this.focusIndex + moves[ev.key], 0),
        state.cards.length - 1,
      );
      this.render(state);
      ev.preventDefault();
    } else if (ev.key === ' ' || ev.key === 'Enter') {
      const card = state.cards[this.focusIndex];
      if (card) void this.store.toggle(card.id);
      ev.preventDefault();
    } else if (ev.key === 'PageDown' && state.page + 1 < state.pages) {
      void this.store.load(state.page + 1);
    } else if (ev.key === 'PageUp' && state.page > 0) {
      void this.store.load(state.page - 1);
    }
  }

  render(state: GalleryState): void {
    this.root.textContent = '';
    const status = state.status;

    const header = document.createElement('header');
    if (status) {
      const meter = document.createElement('div');
      meter.className = 'quota-meter';
      meter.textContent = `stage ${status.current_stage} — selected ${status.selected_count}/${status.quota}`;
      header.appendChild(meter);

      const reference = document.createElement('img');
      reference.className = 'reference';
      reference.src = this.api.imageUrl(status.reference_image_id);
      reference.alt = `reference: ${status.reference_caption}`;
      reference.title = status.reference_caption;
      header.appendChild(reference);

      const promote = document.createElement('button');
      promote.className = 'promote';
      promote.textContent = `promote to stage ${status.current_stage + 1}`;
      promote.disabled = !this.store.quotaMet() || status.current_stage >= 3;
      if (!this.store.quotaMet()) {
        promote.title = `${status.quota - status.selected_count} more selections needed`;
      }
      promote.addEventListener('click', () => {
        if (window.confirm(`Freeze ${status.quota} selections and advance the stage?`)) {
          void this.store.promote();
        }
      });
      header.appendChild(promote);
    }
    this.root.appendChild(header);

    if (state.notice) {
      const banner = document.createElement('div');
      banner.className = 'notice';
      banner.textContent = state.notice;
      if (state.notice.includes('retry')) {
        const retry = document.createElement('button');
        retry.textContent = 'retry';
        retry.addEventListener('click', () => void this.store.load());
        banner.appendChild(retry);
      }
      this.root.appendChild(banner);
    }

    const grid = document.createElement('div');
    grid.className = 'grid';
    if (state.cards.length === 0 && !state.loading) {
      const empty = document.createElement('p');
      empty.className = 'empty';
      empty.textContent =
        'no candidates yet — run `tristyle generate --session …` to fill this stage';
      grid.appendChild(empty);
    }
    const frozen = status !== null && status.current_stage >= 3;
    state.cards.forEach((card, index) => {
      const cell = document.createElement('figure');
      cell.className = 'card';
      cell.dataset.id = card.id;
      if (card.selected) cell.classList.add('selected');
      if (card.pending) cell.classList.add('pending');
      if (index === this.focusIndex) cell.classList.add('focused');

      const img = document.createElement('img');
      img.src = this.api.imageUrl(card.id);
      img.alt = card.id;
      img.loading = 'lazy';
      cell.appendChild(img);

      const tag = document.createElement('figcaption');
      tag.textContent = `${card.selected ? '✓ ' : ''}seed ${card.seed}`;
      cell.appendChild(tag);

      if (!frozen) {
        cell.addEventListener('click', () => {
          this.focusIndex = index;
          void this.store.toggle(card.id);
        });
      } else {
        cell.classList.add('readonly');
      }
      grid.appendChild(cell);
    });
    this.root.appendChild(grid);

    const pager = document.createElement('nav');
    pager.className = 'pager';
    const prev = document.createElement('button');
    prev.textContent = '← prev';
    prev.disabled = state.page === 0;
    prev.addEventListener('click', () => void this.store.load(state.page - 1));
    const label = document.createElement('span');
    label.textContent = ` page ${state.page + 1}/${state.pages} (${state.total} candidates) `;
    const next = document.createElement('button');
    next.textContent = 'next →';
    next.disabled = state.page + 1 >= state.pages;
    next.addEventListener('click', () => void this.store.load(state.page + 1));
    pager.append(prev, label, next);
    this.root.appendChild(pager);
  }
}
