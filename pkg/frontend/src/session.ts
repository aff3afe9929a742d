import type { CourseInfo, User } from "./types.js";

/**
 * Per-tab session state. Holds the short-lived session token from login and
 * the active course/conversation selection. API key plaintexts are never
 * stored here; the key panel keeps them only while visible.
 */
export class SessionState {
  token: string | null = null;
  user: User | null = null;
  activeCourse: CourseInfo | null = null;
  activeConversationId: string | null = null;
  streaming = false;

  get loggedIn(): boolean {
    return this.token !== null;
  }

  reset(): void {
    this.token = null;
    this.user = null;
    this.activeCourse = null;
    this.activeConversationId = null;
    this.streaming = false;
  }
}
