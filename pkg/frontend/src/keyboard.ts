/**
 * Keyboard triage: A accepts, R rejects, arrows move between masks.
 *
 * Shortcuts fire once per physical press (auto-repeat is ignored) and are
 * disabled whenever a text entry element has focus, so typing a note never
 * triggers a review action.
 */

export interface TriageHandlers {
  accept(): void;
  reject(): void;
  next(): void;
  prev(): void;
}

/** The slice of KeyboardEvent the dispatcher reads; tests pass literals. */
export interface KeyLike {
  key: string;
  repeat?: boolean;
  target?: unknown;
  ctrlKey?: boolean;
  metaKey?: boolean;
  altKey?: boolean;
  preventDefault?(): void;
}

interface FocusableLike {
  tagName?: string;
  isContentEditable?: boolean;
}

/** True when the event target is a text entry surface. */
export function isTextEntry(target: unknown): boolean {
  if (!target || typeof target !== 'object') return false;
  const el = target as FocusableLike;
  if (el.isContentEditable) return true;
  const tag = (el.tagName ?? '').toUpperCase();
  return tag === 'INPUT' || tag === 'TEXTAREA' || tag === 'SELECT';
}

/**
 * Route a key event to a triage handler.  Returns true when the event was
 * consumed (and preventDefault was called), false when it should fall
 * through to the browser.
 */
export function dispatchKey(event: KeyLike,
                            handlers: TriageHandlers): boolean {
  if (event.repeat) return false;
  if (event.ctrlKey || event.metaKey || event.altKey) return false;
  if (isTextEntry(event.target)) return false;

  let action: (() => void) | null = null;
  switch (event.key) {
    case 'a':
    case 'A':
      action = () => handlers.accept();
      break;
    case 'r':
    case 'R':
      action = () => handlers.reject();
      break;
    case 'ArrowRight':
    case 'ArrowDown':
      action = () => handlers.next();
      break;
    case 'ArrowLeft':
    case 'ArrowUp':
      action = () => handlers.prev();
      break;
    default:
      return false;
  }
  event.preventDefault?.();
  action();
  return true;
}

/** Bind the dispatcher to a document; returns the unbind function. */
export function attachTriage(doc: { addEventListener(type: string,
                                                     fn: (e: KeyboardEvent) => void): void;
                                    removeEventListener(type: string,
                                                        fn: (e: KeyboardEvent) => void): void; },
                             handlers: TriageHandlers): () => void {
  const listener = (e: KeyboardEvent) => {
    dispatchKey(e, handlers);
  };
  doc.addEventListener('keydown', listener);
  return () => doc.removeEventListener('keydown', listener);
}
